//! Training objectives, selectable by name.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{self, LossNodes, ModelDims, ModelParams, ObjectiveKind};
use crate::params::BoundParams;

/// A trainable objective: its parameter layout, its loss graph and its
/// recovery rule.
pub trait Objective: Send + Sync {
    fn kind(&self) -> ObjectiveKind;

    /// Registry name, as accepted on the command line.
    fn name(&self) -> &'static str;

    fn init_params(&self, dims: ModelDims, seed: u64) -> Result<ModelParams> {
        ModelParams::init(self.kind(), dims, seed)
    }

    /// Records the loss for one optimisation step. `rng` supplies any noise
    /// the objective needs.
    #[allow(clippy::too_many_arguments)]
    fn build_loss(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        bound: &BoundParams,
        x: &Matrix,
        labels: &Matrix,
        rng: &mut ChaCha8Rng,
        alpha: f64,
        beta: f64,
        mc_samples: usize,
    ) -> Result<LossNodes>;

    fn recover(&self, params: &ModelParams, x: &Matrix) -> Result<Matrix> {
        model::recover_all(params, x)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Lib;

impl Objective for Lib {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Lib
    }

    fn name(&self) -> &'static str {
        "lib"
    }

    fn build_loss(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        bound: &BoundParams,
        x: &Matrix,
        labels: &Matrix,
        rng: &mut ChaCha8Rng,
        alpha: f64,
        beta: f64,
        mc_samples: usize,
    ) -> Result<LossNodes> {
        let eps: Vec<Matrix> = (0..mc_samples)
            .map(|_| model::standard_normal(x.rows(), params.dims.latent_dim, rng))
            .collect();
        model::lib_loss_nodes(tape, params, bound, x, labels, &eps, alpha, beta)
    }
}

/// Gap term only, with both heads reading the features directly.
#[derive(Debug, Default, Clone, Copy)]
pub struct LibGap;

impl Objective for LibGap {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::LibGap
    }

    fn name(&self) -> &'static str {
        "libgap"
    }

    fn build_loss(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        bound: &BoundParams,
        x: &Matrix,
        labels: &Matrix,
        _rng: &mut ChaCha8Rng,
        _alpha: f64,
        _beta: f64,
        _mc_samples: usize,
    ) -> Result<LossNodes> {
        model::lib_gap_loss_nodes(tape, params, bound, x, labels)
    }
}

static LIB: Lib = Lib;
static LIB_GAP: LibGap = LibGap;

/// Every registered objective.
pub fn registry() -> [&'static dyn Objective; 2] {
    [&LIB, &LIB_GAP]
}

pub fn by_kind(kind: ObjectiveKind) -> &'static dyn Objective {
    match kind {
        ObjectiveKind::Lib => &LIB,
        ObjectiveKind::LibGap => &LIB_GAP,
    }
}

/// Looks an objective up by registry name (`lib`, `libgap`) or by its
/// kind label (`LIB`, `LIB_GAP`).
pub fn by_name(name: &str) -> Result<&'static dyn Objective> {
    registry()
        .into_iter()
        .find(|o| o.name().eq_ignore_ascii_case(name) || o.kind().as_str().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "objective",
            name: name.to_string(),
            available: registry().iter().map(|o| o.name()).collect::<Vec<_>>().join(", "),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_either_name() {
        assert_eq!(by_name("lib").unwrap().kind(), ObjectiveKind::Lib);
        assert_eq!(by_name("LIB_GAP").unwrap().kind(), ObjectiveKind::LibGap);
        assert_eq!(by_name("libgap").unwrap().kind(), ObjectiveKind::LibGap);
        let err = by_name("vae").err().unwrap().to_string();
        assert!(err.contains("lib, libgap"), "{err}");
    }

    #[test]
    fn gap_objective_has_no_encoder_or_decoder() {
        let dims = ModelDims {
            input_dim: 3,
            hidden_dim: 4,
            latent_dim: 8,
            n_labels: 2,
        };
        let p = LibGap.init_params(dims, 0).unwrap();
        assert!(p.blocks.names().all(|n| n.starts_with("gap.") || n.starts_with("ld.")));
        assert_eq!(p.blocks.get("gap.0.weight").unwrap().shape(), (3, 4));
    }
}
