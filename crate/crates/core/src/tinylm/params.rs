//! Flat parameter storage. All tensors live in one `Vec<f64>` in a fixed
//! declared order, which is also the checkpoint order.

use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one block's tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub slots: Vec<TensorSlot>,
    pub total: usize,
    pub(crate) wte: usize,
    pub(crate) wpe: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v, t) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len);
        let mut slots = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| -> usize {
            let off = total;
            total += shape.iter().product::<usize>();
            slots.push(TensorSlot {
                name,
                shape,
                offset: off,
            });
            off
        };
        let wte = add("wte".into(), vec![v, d]);
        let wpe = add("wpe".into(), vec![t, d]);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockOffsets {
                ln1_g: add(p("ln1.g"), vec![d]),
                ln1_b: add(p("ln1.b"), vec![d]),
                wqkv: add(p("attn.wqkv"), vec![d, 3 * d]),
                bqkv: add(p("attn.bqkv"), vec![3 * d]),
                wo: add(p("attn.wo"), vec![d, d]),
                bo: add(p("attn.bo"), vec![d]),
                ln2_g: add(p("ln2.g"), vec![d]),
                ln2_b: add(p("ln2.b"), vec![d]),
                w1: add(p("mlp.w1"), vec![d, f]),
                b1: add(p("mlp.b1"), vec![f]),
                w2: add(p("mlp.w2"), vec![f, d]),
                b2: add(p("mlp.b2"), vec![d]),
            });
        }
        let lnf_g = add("lnf.g".into(), vec![d]);
        let lnf_b = add("lnf.b".into(), vec![d]);
        let head_w = add("head.w".into(), vec![d, v]);
        let head_b = add("head.b".into(), vec![v]);
        Self {
            slots,
            total,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn slot_of(&self, i: usize) -> &TensorSlot {
        self.slots
            .iter()
            .find(|s| s.range().contains(&i))
            .expect("index within layout")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_tile_the_buffer() {
        let cfg = ModelConfig::new(37, 0);
        let l = ParamLayout::new(&cfg);
        let mut next = 0;
        for s in &l.slots {
            assert_eq!(s.offset, next, "{}", s.name);
            next += s.len();
        }
        assert_eq!(next, l.total);
        assert_eq!(l.slots.len(), 2 + 12 * cfg.n_layers + 4);
        assert_eq!(l.slot_of(l.head_b).name, "head.b");
    }
}
