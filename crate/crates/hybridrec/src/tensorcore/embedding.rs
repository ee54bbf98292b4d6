//! Embedding lookup layer over a row table, with optional training.

use super::tensor::{Param, ParamVisitor, Tensor};

/// Gathers rows of a `[rows, dim]` table by integer id. The last two rows are
/// reserved (UNK then PAD); the PAD row never receives gradient so it stays
/// exactly zero.
#[derive(Clone, Debug)]
pub struct EmbeddingLookup {
    pub table: Param,
    pub trainable: bool,
    pad_index: usize,
    cache_ids: Option<Vec<usize>>,
}

impl EmbeddingLookup {
    /// `table` has `vocab + 2` rows; `pad_index = rows - 1`.
    pub fn new(table: Tensor, trainable: bool) -> Self {
        assert_eq!(table.rank(), 2, "embedding table must be [rows, dim]");
        assert!(table.dim(0) >= 2, "embedding table needs UNK and PAD rows");
        let pad_index = table.dim(0) - 1;
        EmbeddingLookup {
            table: Param::new(table),
            trainable,
            pad_index,
            cache_ids: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.table.value.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.table.value.shape[1]
    }

    pub fn unk_index(&self) -> usize {
        self.pad_index - 1
    }

    pub fn pad_index(&self) -> usize {
        self.pad_index
    }

    /// Looks up `ids` (row-major over `batch_shape`) producing a tensor of
    /// shape `batch_shape + [dim]`.
    pub fn forward(&mut self, ids: &[usize], batch_shape: &[usize]) -> Tensor {
        let count: usize = batch_shape.iter().product();
        assert_eq!(ids.len(), count, "id count does not match batch shape");
        let dim = self.dim();
        let rows = self.rows();
        let mut shape = batch_shape.to_vec();
        shape.push(dim);
        let mut out = Tensor::zeros(&shape);
        for (slot, &id) in ids.iter().enumerate() {
            assert!(
                id < rows,
                "embedding id {id} out of range (table has {rows} rows incl. UNK/PAD)"
            );
            let src = &self.table.value.data[id * dim..(id + 1) * dim];
            out.data[slot * dim..(slot + 1) * dim].copy_from_slice(src);
        }
        self.cache_ids = Some(ids.to_vec());
        out
    }

    /// Scatters gradient into looked-up rows when trainable; frozen tables
    /// accumulate nothing.
    pub fn backward(&mut self, grad_out: &Tensor) {
        let ids = self
            .cache_ids
            .take()
            .expect("embedding backward called without forward");
        if !self.trainable {
            return;
        }
        let dim = self.dim();
        assert_eq!(grad_out.len(), ids.len() * dim, "embedding grad size mismatch");
        for (slot, &id) in ids.iter().enumerate() {
            if id == self.pad_index {
                continue;
            }
            let dst = &mut self.table.grad.data[id * dim..(id + 1) * dim];
            let src = &grad_out.data[slot * dim..(slot + 1) * dim];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

impl ParamVisitor for EmbeddingLookup {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if self.trainable {
            f(&mut self.table);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Tensor {
        // 2 vocab rows + UNK + PAD
        Tensor::from_vec(
            &[4, 2],
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        )
    }

    #[test]
    fn gathers_rows() {
        let mut e = EmbeddingLookup::new(table(), false);
        let out = e.forward(&[0, 0], &[2]);
        assert_eq!(out.shape, vec![2, 2]);
        assert_eq!(out.data, vec![1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn unk_and_pad_are_zero() {
        let mut e = EmbeddingLookup::new(table(), false);
        let out = e.forward(&[e.unk_index(), e.pad_index()], &[2]);
        assert_eq!(out.data, vec![0.0; 4]);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_id_rejected() {
        let mut e = EmbeddingLookup::new(table(), false);
        e.forward(&[4], &[1]);
    }

    #[test]
    fn frozen_table_receives_zero_gradient() {
        let mut e = EmbeddingLookup::new(table(), false);
        e.forward(&[0], &[1]);
        e.backward(&Tensor::from_vec(&[1, 2], vec![1.0, 1.0]));
        assert!(e.table.grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn trainable_table_scatters_but_pad_stays_zero() {
        let mut e = EmbeddingLookup::new(table(), true);
        let pad = e.pad_index();
        e.forward(&[0, pad], &[2]);
        e.backward(&Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 5.0, 5.0]));
        assert_eq!(&e.table.grad.data[0..2], &[1.0, 2.0]);
        assert_eq!(&e.table.grad.data[pad * 2..pad * 2 + 2], &[0.0, 0.0]);
    }
}
