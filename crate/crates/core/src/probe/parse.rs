//! Parsing of expressed quantities such as `1902`, `40,000`, `-92.00` or
//! `7.5 billion`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unparseable quantity {0:?}")]
pub struct Unparseable(pub String);

/// `[sign] digits[,ddd]* [.digits] [thousand|million|billion]`.
pub fn parse_quantity(text: &str) -> Result<f64, Unparseable> {
    let fail = || Unparseable(text.to_string());
    let s = text.trim();
    let (number, scale) = match s.split_once(char::is_whitespace) {
        Some((num, word)) => {
            let scale = match word.trim() {
                "thousand" => 1e3,
                "million" => 1e6,
                "billion" => 1e9,
                _ => return Err(fail()),
            };
            (num, scale)
        }
        None => (s, 1.0),
    };

    let (negative, unsigned) = match number.as_bytes().first() {
        Some(b'-') => (true, &number[1..]),
        Some(b'+') => (false, &number[1..]),
        _ => (false, number),
    };
    let (int_part, frac_part) = match unsigned.split_once('.') {
        Some((i, f)) => {
            if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
                return Err(fail());
            }
            (i, Some(f))
        }
        None => (unsigned, None),
    };
    if int_part.is_empty() {
        return Err(fail());
    }
    let digits: String = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let first_ok = (1..=3).contains(&groups[0].len());
        let rest_ok = groups[1..].iter().all(|g| g.len() == 3);
        if !first_ok || !rest_ok || !groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit())) {
            return Err(fail());
        }
        groups.concat()
    } else {
        if !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail());
        }
        int_part.to_string()
    };
    let literal = match frac_part {
        Some(f) => format!("{digits}.{f}"),
        None => digits,
    };
    let mantissa: f64 = literal.parse().map_err(|_| fail())?;
    let value = mantissa * scale;
    Ok(if negative { -value } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_answers() {
        assert_eq!(parse_quantity("1902"), Ok(1902.0));
        assert_eq!(parse_quantity("40,000"), Ok(40000.0));
        assert_eq!(parse_quantity("10 million"), Ok(1e7));
        assert_eq!(parse_quantity("1.3 billion"), Ok(1.3e9));
        assert_eq!(parse_quantity("7.5 billion"), Ok(7.5e9));
        assert_eq!(parse_quantity("12,000"), Ok(12000.0));
        assert_eq!(parse_quantity("-92.00"), Ok(-92.0));
    }

    #[test]
    fn other_forms() {
        assert_eq!(parse_quantity(" 3 thousand "), Ok(3000.0));
        assert_eq!(parse_quantity("+1,234,567.5"), Ok(1234567.5));
        assert_eq!(parse_quantity("0.05"), Ok(0.05));
    }

    #[test]
    fn rejects_non_numeric() {
        for bad in [
            "abc", "", "-", "1,00", "12,0000", "1.", ".5", "1.2.3", "5 zillion", "born", "1e5",
            "<eos>", "10 million people",
        ] {
            assert!(parse_quantity(bad).is_err(), "{bad:?} should fail");
        }
    }
}
