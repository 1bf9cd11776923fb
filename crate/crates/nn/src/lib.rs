//! Dense numerical kernel used by the CDCMA agent and its trainer.
//!
//! Everything here is plain `f64` data with explicit shapes. There is no
//! autodiff graph: each network exposes a forward pass that records a
//! [`ForwardCache`] and a backward pass that consumes it. Losses built on top
//! of this crate derive their own backward paths by hand.
//!
//! Batches are row-major [`Matrix`] values with one sample per row.

mod adam;
mod archive;
mod error;
mod matrix;
mod mlp;
pub mod ops;

pub use adam::{AdamConfig, AdamState};
pub use archive::{Archive, Entry, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use error::{NnError, Result};
pub use matrix::Matrix;
pub use mlp::{sync_target, Activation, Dense, ForwardCache, LayerGrads, Mlp, MlpGrads, SyncMode};

/// Anything that owns a fixed list of parameter slices.
///
/// Optimizers and finite-difference checks walk parameters through this trait so
/// that a network and its gradient buffer line up slice for slice.
pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Copies every parameter into one flat vector, in slice order.
    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(NnError::shape(format!(
                "flat parameter vector has {} entries, expected {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
