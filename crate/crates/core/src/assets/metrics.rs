use serde::{Deserialize, Serialize};

use crate::compose::{activate_opacity, Avatar, ResidualAttributes};
use crate::error::{Error, Result};
use crate::headmodel::ExpressionState;
use crate::math::{self, Vec3};
use crate::uvatlas;

/// Added inside both logarithms of the opacity term.
pub const OPACITY_LOG_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerWeights {
    pub pos: f64,
    pub scale: f64,
    pub opacity: f64,
    pub pos_d: f64,
    pub scale_d: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self {
            pos: 0.25,
            scale: 0.5,
            opacity: 1.0,
            pos_d: 1.5,
            scale_d: 1.5,
        }
    }
}

impl RegularizerWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.pos, self.scale, self.opacity, self.pos_d, self.scale_d]
    }
}

/// Regularizer terms of one avatar state.
///
/// `l_opacity` is the mean of `½(log(α + ε) + log(1 − α + ε))`, the
/// Beta(½, ½) negative log-density up to a constant. It peaks at α = 0.5 and
/// falls toward both ends, so minimizing it pushes opacities to 0 or 1. It
/// is negative for every α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerReport {
    pub l_pos: f64,
    pub l_scale: f64,
    pub l_opacity: f64,
    pub l_pos_d: f64,
    pub l_scale_d: f64,
    pub weights: RegularizerWeights,
    pub weighted_total: f64,
    pub opacity_form: String,
}

fn mean_sq_norm(rows: &[Vec3]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|r| {
            let v = math::to_f64(*r);
            math::dot3(v, v)
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// `position_offset` and `log_scale` are the canonical pre-activation rows
/// per Gaussian, `opacity` the activated opacities.
pub fn regularizer_metrics(
    position_offset: &[Vec3],
    log_scale: &[Vec3],
    opacity: &[f32],
    residuals: &ResidualAttributes,
    weights: RegularizerWeights,
) -> Result<RegularizerReport> {
    let n = position_offset.len();
    if log_scale.len() != n || opacity.len() != n || residuals.d_mu.len() != n || residuals.d_log_scale.len() != n
    {
        return Err(Error::param(format!(
            "attribute counts differ: offsets {n}, log-scales {}, opacities {}, residuals {}/{}",
            log_scale.len(),
            opacity.len(),
            residuals.d_mu.len(),
            residuals.d_log_scale.len()
        )));
    }
    let l_opacity = if n == 0 {
        0.0
    } else {
        opacity
            .iter()
            .map(|&a| {
                let a = a as f64;
                0.5 * ((a + OPACITY_LOG_EPS).ln() + (1.0 - a + OPACITY_LOG_EPS).ln())
            })
            .sum::<f64>()
            / n as f64
    };
    let mut r = RegularizerReport {
        l_pos: mean_sq_norm(position_offset),
        l_scale: mean_sq_norm(log_scale),
        l_opacity,
        l_pos_d: mean_sq_norm(&residuals.d_mu),
        l_scale_d: mean_sq_norm(&residuals.d_log_scale),
        weights,
        weighted_total: 0.0,
        opacity_form: "beta(1/2,1/2) log-density: mean 0.5*(ln(a+1e-6) + ln(1-a+1e-6))".into(),
    };
    let terms = [r.l_pos, r.l_scale, r.l_opacity, r.l_pos_d, r.l_scale_d];
    r.weighted_total = terms.iter().zip(weights.as_array()).map(|(t, w)| t * w).sum();
    Ok(r)
}

/// Metrics of `avatar` at `state`: canonical rows sampled on the asset grid
/// and residuals from the avatar's default provider.
pub fn avatar_regularizer_metrics(
    avatar: &Avatar,
    state: &ExpressionState,
    weights: RegularizerWeights,
) -> Result<RegularizerReport> {
    let asset = avatar.asset();
    let raw = uvatlas::grid_sample(&asset.maps, &asset.grid.uvs())?;
    let rows = |v: &[f32]| -> Vec<Vec3> { v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let jaw = state.pose[asset.model.jaw_joint()?];
    let mut residuals = ResidualAttributes::default();
    avatar
        .default_provider()
        .evaluate(&state.expression, jaw, &mut residuals)?;
    regularizer_metrics(
        &rows(&raw.position_offset),
        &rows(&raw.log_scale),
        &activate_opacity(&raw.opacity_logit),
        &residuals,
        weights,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_inputs_give_zero_l2_terms() {
        let z = vec![[0.0; 3]; 5];
        let res = ResidualAttributes::zeros(5);
        let r = regularizer_metrics(&z, &z, &[0.5; 5], &res, RegularizerWeights::default()).unwrap();
        assert_eq!([r.l_pos, r.l_scale, r.l_pos_d, r.l_scale_d], [0.0; 4]);
        assert_eq!(r.weights.as_array(), [0.25, 0.5, 1.0, 1.5, 1.5]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let z = vec![[0.0; 3]; 5];
        let res = ResidualAttributes::zeros(4);
        assert!(regularizer_metrics(&z, &z, &[0.5; 5], &res, RegularizerWeights::default()).is_err());
    }
}
