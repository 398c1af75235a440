//! Locality-sensitive hash families and their collision probabilities.

mod ball;
mod euclidean;

pub use ball::{
    collision_prob_ball, collision_prob_ball_bounds, eval_ball_carving, sample_ball_carving,
    BallCarvingHash, BallCarvingParams, BallCollisionTable, CarvingCopy,
};
pub use euclidean::{
    collision_prob_euclidean, collision_prob_euclidean_bounds, collision_prob_euclidean_series,
    eval_euclidean, p1, sample_euclidean, EuclideanHash,
};

use crate::error::{domain, Result};

/// Two-sided bracket on a collision probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionBound {
    pub lower: f64,
    pub upper: f64,
}

impl CollisionBound {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Below,
    Above,
}

/// Exponential tail bound for a chi-square variable with `t` degrees of freedom:
/// `P[X ≤ a t]` for `a < 1` or `P[X > a t]` for `a > 1`.
pub fn chi_square_tail(t: usize, a: f64, side: TailSide) -> Result<f64> {
    if t == 0 {
        return domain("degrees of freedom must be positive");
    }
    let exponent = match side {
        TailSide::Below if a > 0.0 && a < 1.0 => a + (1.0 / a).ln() - 1.0,
        TailSide::Above if a > 1.0 => a - a.ln() - 1.0,
        _ => return domain(format!("ratio {a} is on the wrong side of 1 for a {side:?} tail")),
    };
    Ok((-exponent * t as f64 / 2.0).exp())
}

#[inline]
pub(crate) fn mix_key(h: u64, v: u64) -> u64 {
    crate::seed::splitmix64(h ^ v.rotate_left(17) ^ 0xa076_1d64_78bd_642f)
}
