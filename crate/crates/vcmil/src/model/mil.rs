//! Per-instance scoring head: three fully connected layers D -> 512 -> 32 ->
//! 1 with ReLU and heavy dropout after the first two, sigmoid output. Each
//! instance row is scored independently.

use super::{Linear, ParamBuilder, Phase};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct MilHead {
    pub dim_in: usize,
    dropout_p: f32,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

pub const MIL_HIDDEN_1: usize = 512;
pub const MIL_HIDDEN_2: usize = 32;

impl MilHead {
    pub(crate) fn init(dim_in: usize, dropout_p: f32, b: &mut ParamBuilder) -> MilHead {
        MilHead {
            dim_in,
            dropout_p,
            fc1: b.linear_xavier("mil.fc1", dim_in, MIL_HIDDEN_1),
            fc2: b.linear_xavier("mil.fc2", MIL_HIDDEN_1, MIL_HIDDEN_2),
            fc3: b.linear_xavier("mil.fc3", MIL_HIDDEN_2, 1),
        }
    }

    /// `instances`: `[M, dim_in]` -> scores `[M, 1]` in (0,1).
    pub fn forward(&self, instances: &Tensor, phase: &mut Phase) -> Result<Tensor> {
        let shape = instances.shape();
        if shape.len() != 2 || shape[1] != self.dim_in {
            return Err(Error::shape(
                "mil.forward",
                format!("expected [*, {}] instances, got {:?}", self.dim_in, shape),
            ));
        }
        if shape[0] == 0 {
            return Err(Error::Contract("mil head needs at least one instance".into()));
        }
        let h1 = phase.apply_dropout(&self.fc1.forward(instances)?.relu(), self.dropout_p);
        let h2 = phase.apply_dropout(&self.fc2.forward(&h1)?.relu(), self.dropout_p);
        Ok(self.fc3.forward(&h2)?.sigmoid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};

    fn head(dim: usize) -> MilHead {
        let mut rng = stream_rng(0, stream::MODEL_INIT, 0);
        let mut b = ParamBuilder::new(&mut rng);
        MilHead::init(dim, 0.6, &mut b)
    }

    #[test]
    fn scores_are_per_instance_and_in_range() {
        let h = head(5);
        let x = Tensor::constant(
            vec![
                0.1, -0.2, 0.3, 1.0, -1.0, //
                0.5, 0.5, 0.5, 0.5, 0.5, //
                0.1, -0.2, 0.3, 1.0, -1.0,
            ],
            vec![3, 5],
        )
        .unwrap();
        let s = h.forward(&x, &mut Phase::Eval).unwrap();
        assert_eq!(s.shape(), vec![3, 1]);
        let v = s.to_vec();
        assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));
        // Duplicate rows produce identical scores.
        assert_eq!(v[0], v[2]);
    }

    #[test]
    fn single_instance_bag_works() {
        let h = head(4);
        let x = Tensor::constant(vec![0.2, 0.4, -0.6, 0.8], vec![1, 4]).unwrap();
        let s = h.forward(&x, &mut Phase::Eval).unwrap();
        assert_eq!(s.shape(), vec![1, 1]);
    }

    #[test]
    fn permuting_instances_permutes_scores() {
        let h = head(3);
        let a = Tensor::constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec![2, 3]).unwrap();
        let b = Tensor::constant(vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0], vec![2, 3]).unwrap();
        let sa = h.forward(&a, &mut Phase::Eval).unwrap().to_vec();
        let sb = h.forward(&b, &mut Phase::Eval).unwrap().to_vec();
        assert_eq!(sa[0], sb[1]);
        assert_eq!(sa[1], sb[0]);
    }

    #[test]
    fn empty_bag_and_wrong_dim_are_errors() {
        let h = head(3);
        let empty = Tensor::constant(vec![], vec![0, 3]).unwrap();
        assert!(h.forward(&empty, &mut Phase::Eval).is_err());
        let wrong = Tensor::constant(vec![0.0; 4], vec![1, 4]).unwrap();
        assert!(h.forward(&wrong, &mut Phase::Eval).is_err());
    }

    #[test]
    fn dropout_only_fires_in_training() {
        let h = head(4);
        let x = Tensor::constant(vec![0.3; 8], vec![2, 4]).unwrap();
        let e1 = h.forward(&x, &mut Phase::Eval).unwrap().to_vec();
        let e2 = h.forward(&x, &mut Phase::Eval).unwrap().to_vec();
        assert_eq!(e1, e2);

        use rand::SeedableRng;
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t1 = h.forward(&x, &mut Phase::Train { rng: &mut r1 }).unwrap().to_vec();
        let t2 = h.forward(&x, &mut Phase::Train { rng: &mut r2 }).unwrap().to_vec();
        assert_eq!(t1, t2);
    }
}
