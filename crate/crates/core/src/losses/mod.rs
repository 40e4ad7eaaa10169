//! Training objectives: reprojection, dispersity peak, neural reprojection
//! error (NRE) on descriptors, reliability, and their weighted sum.

mod pair;
mod terms;

pub use pair::{pair_loss, PairLoss, ViewGraph};
pub use terms::{
    dispersity_peak_loss, matching_probability, nre_descriptor_loss, nre_value, reliability_loss, reprojection_loss,
    reprojection_term, symmetric_mean, total_loss, Term,
};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub w_rp: f64,
    pub w_pk: f64,
    pub w_rl: f64,
    pub w_de: f64,
    pub t_rel: f64,
    pub t_des: f64,
    /// Correspondence distance threshold in pixels.
    pub th_gt: f64,
    /// Order of the norm used for reprojection and peak distances.
    pub norm_p: f64,
    /// Similarity assigned to the outlier category.
    pub outlier_bin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_rp: 1.0,
            w_pk: 1.0,
            w_rl: 1.0,
            w_de: 5.0,
            t_rel: 1.0,
            t_des: 0.02,
            th_gt: 5.0,
            norm_p: 1.0,
            outlier_bin: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_rp", self.w_rp),
            ("w_pk", self.w_pk),
            ("w_rl", self.w_rl),
            ("w_de", self.w_de),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        for (name, t) in [("t_rel", self.t_rel), ("t_des", self.t_des), ("th_gt", self.th_gt)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {t}")));
            }
        }
        if !(self.norm_p >= 1.0) {
            return Err(Error::Config(format!("norm_p must be at least 1, got {}", self.norm_p)));
        }
        Ok(())
    }

    pub fn weighted(&self, [rp, pk, rl, de]: [f64; 4]) -> f64 {
        self.w_rp * rp + self.w_pk * pk + self.w_rl * rl + self.w_de * de
    }
}

/// Component values of one pair and the bookkeeping behind them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub rp: f64,
    pub pk: f64,
    pub rl: f64,
    pub de: f64,
    pub total: f64,
    /// Correspondences found A→B and B→A.
    pub matched: [usize; 2],
    /// Terms that had nothing to average and contributed zero.
    pub warnings: Vec<String>,
}

impl LossReport {
    pub fn from_components(components: [f64; 4], cfg: &LossConfig) -> Self {
        let [rp, pk, rl, de] = components;
        Self {
            rp,
            pk,
            rl,
            de,
            total: cfg.weighted(components),
            ..Self::default()
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.rp, self.pk, self.rl, self.de]
    }
}
