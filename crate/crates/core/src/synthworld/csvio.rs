//! Facts CSV: `Property, Prop. ID, Entity, Entity ID, Prompt, Value, Unit`.

use std::path::Path;

use super::{FactRecord, WorldError};

pub const FACTS_HEADER: [&str; 7] = [
    "Property",
    "Prop. ID",
    "Entity",
    "Entity ID",
    "Prompt",
    "Value",
    "Unit",
];

pub fn write_facts_csv<W: std::io::Write>(out: W, facts: &[FactRecord]) -> Result<(), WorldError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(FACTS_HEADER)?;
    for f in facts {
        // Display of f64 is the shortest string that parses back exactly
        let value = format!("{}", f.value);
        w.write_record([
            f.property_id.as_str(),
            f.property_code.as_str(),
            f.entity_name.as_str(),
            f.entity_id.as_str(),
            f.prompt.as_str(),
            value.as_str(),
            f.unit.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_facts_csv<R: std::io::Read>(input: R) -> Result<Vec<FactRecord>, WorldError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(FACTS_HEADER.iter().copied()) {
        return Err(WorldError::SchemaMismatch(format!(
            "expected {:?}, got {:?}",
            FACTS_HEADER,
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut facts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| WorldError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != FACTS_HEADER.len() {
            return Err(WorldError::MalformedRow {
                row,
                reason: format!("expected 7 fields, got {}", rec.len()),
            });
        }
        let value: f64 = rec[5].trim().parse().map_err(|_| WorldError::MalformedRow {
            row,
            reason: format!("value {:?} is not a number", &rec[5]),
        })?;
        if !value.is_finite() {
            return Err(WorldError::MalformedRow {
                row,
                reason: "value is not finite".into(),
            });
        }
        facts.push(FactRecord {
            property_id: rec[0].to_string(),
            property_code: rec[1].to_string(),
            entity_name: rec[2].to_string(),
            entity_id: rec[3].to_string(),
            prompt: rec[4].to_string(),
            value,
            unit: rec[6].to_string(),
        });
    }
    Ok(facts)
}

impl FactRecord {
    pub fn save_all(path: &Path, facts: &[FactRecord]) -> Result<(), WorldError> {
        let f = std::fs::File::create(path)?;
        write_facts_csv(std::io::BufWriter::new(f), facts)
    }

    pub fn load_all(path: &Path) -> Result<Vec<FactRecord>, WorldError> {
        let f = std::fs::File::open(path)?;
        read_facts_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};

    #[test]
    fn thousand_records_round_trip() {
        let w = generate_world(&WorldConfig {
            n_entities: 167,
            ..WorldConfig::default()
        })
        .unwrap();
        let facts = &w.facts[..1000];
        let mut buf = Vec::new();
        write_facts_csv(&mut buf, facts).unwrap();
        let back = read_facts_csv(buf.as_slice()).unwrap();
        assert_eq!(back, facts);
    }

    #[test]
    fn reference_rows_parse() {
        let csv = "Property,Prop. ID,Entity,Entity ID,Prompt,Value,Unit\n\
                   birthyear,P569,Nina Foch,Q235632,In what year was Nina Foch born?,1924,annum\n\
                   longitude,P625.long,Pine Bluff,Q80012,What is the longitude of Pine Bluff?,-92.00,degree\n";
        let facts = read_facts_csv(csv.as_bytes()).unwrap();
        assert_eq!(facts[0].entity_name, "Nina Foch");
        assert_eq!(facts[0].property_code, "P569");
        assert_eq!(facts[0].value, 1924.0);
        assert_eq!(facts[0].unit, "annum");
        assert_eq!(facts[1].value, -92.0);

        let mut buf = Vec::new();
        write_facts_csv(&mut buf, &facts[..1]).unwrap();
        assert_eq!(read_facts_csv(buf.as_slice()).unwrap(), facts[..1]);
    }

    #[test]
    fn swapped_header_is_schema_mismatch() {
        let csv = "Prop. ID,Property,Entity,Entity ID,Prompt,Value,Unit\n";
        assert!(matches!(
            read_facts_csv(csv.as_bytes()),
            Err(WorldError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn bad_value_reports_row() {
        let csv = "Property,Prop. ID,Entity,Entity ID,Prompt,Value,Unit\n\
                   birthyear,P569,A,Q1,p,1900,annum\n\
                   birthyear,P569,B,Q2,p,abc,annum\n";
        match read_facts_csv(csv.as_bytes()) {
            Err(WorldError::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
