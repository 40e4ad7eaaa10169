use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::backbone::ModelConfig;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;

/// Which descriptor loss drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptorMode {
    /// Neural reprojection error.
    Nre,
    /// Hardest-negative triplet loss, kept as a comparison baseline.
    Triplet,
}

impl FromStr for DescriptorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nre" => Ok(Self::Nre),
            "triplet" => Ok(Self::Triplet),
            _ => Err(format!("unknown descriptor loss `{s}` (expected nre or triplet)")),
        }
    }
}

impl DescriptorMode {
    fn name(self) -> &'static str {
        match self {
            Self::Nre => "nre",
            Self::Triplet => "triplet",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub width: usize,
    pub height: usize,
    /// Optimizer steps; each consumes `accumulation` pairs.
    pub steps: usize,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub accumulation: usize,
    pub seed: u64,
    /// Detector used to pick the salient training keypoints; `top_k` is the
    /// per-image budget.
    pub detector: DetectorConfig,
    /// Non-salient positions drawn per image.
    pub n_random: usize,
    pub loss: LossConfig,
    pub descriptor_mode: DescriptorMode,
    pub triplet_margin: f64,
    pub checkpoint_every: usize,
    pub keep_checkpoints: usize,
    /// Photometric jitter on the synthetic pairs.
    pub photometric: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            width: 96,
            height: 96,
            steps: 2000,
            lr_peak: 3e-3,
            warmup_steps: 500,
            accumulation: 16,
            seed: 0,
            detector: DetectorConfig {
                top_k: 400,
                ..DetectorConfig::default()
            },
            n_random: 400,
            loss: LossConfig::default(),
            descriptor_mode: DescriptorMode::Nre,
            triplet_margin: 0.5,
            checkpoint_every: 100,
            keep_checkpoints: 3,
            photometric: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.detector.validate()?;
        self.loss.validate()?;
        let multiple = crate::backbone::INPUT_MULTIPLE;
        if self.width == 0
            || self.height == 0
            || !self.width.is_multiple_of(multiple)
            || !self.height.is_multiple_of(multiple)
        {
            return Err(Error::Config(format!(
                "image size {}×{} must be a positive multiple of {multiple}",
                self.width, self.height
            )));
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be at least 1".into()));
        }
        if !(self.lr_peak >= 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::Config(format!(
                "lr_peak must be finite and non-negative, got {}",
                self.lr_peak
            )));
        }
        if self.checkpoint_every == 0 || self.keep_checkpoints == 0 {
            return Err(Error::Config(
                "checkpoint_every and keep_checkpoints must be at least 1".into(),
            ));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::Config(format!(
                "triplet_margin must be non-negative, got {}",
                self.triplet_margin
            )));
        }
        Ok(())
    }

    /// Learning rate after `step` completed warmup steps:
    /// `lr_peak · min(step / warmup_steps, 1)`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr_peak;
        }
        self.lr_peak * (step as f64 / self.warmup_steps as f64).min(1.0)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes, path)
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::parse(path, e.valid_up_to() as u64, "config is not valid UTF-8"))?;
        let mut cfg = Self::default();
        let mut offset = 0u64;
        for raw in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += raw.len() as u64;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    path,
                    line_offset,
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|msg| Error::parse(path, line_offset, msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "model" => {
                self.model = ModelConfig::preset(value).ok_or_else(|| format!("unknown model preset `{value}`"))?
            }
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "lr_peak" => self.lr_peak = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "accumulation" => self.accumulation = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "top_k_train" => self.detector.top_k = num(key, value)?,
            "n_random" => self.n_random = num(key, value)?,
            "window" => self.detector.window = num(key, value)?,
            "t_det" => self.detector.t_det = num(key, value)?,
            "threshold" => self.detector.threshold = num(key, value)?,
            "margin" => self.detector.margin = num(key, value)?,
            "w_rp" => self.loss.w_rp = num(key, value)?,
            "w_pk" => self.loss.w_pk = num(key, value)?,
            "w_rl" => self.loss.w_rl = num(key, value)?,
            "w_de" => self.loss.w_de = num(key, value)?,
            "t_rel" => self.loss.t_rel = num(key, value)?,
            "t_des" => self.loss.t_des = num(key, value)?,
            "th_gt" => self.loss.th_gt = num(key, value)?,
            "norm_p" => self.loss.norm_p = num(key, value)?,
            "outlier_bin" => self.loss.outlier_bin = num(key, value)?,
            "descriptor_loss" => self.descriptor_mode = value.parse()?,
            "triplet_margin" => self.triplet_margin = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "keep_checkpoints" => self.keep_checkpoints = num(key, value)?,
            "photometric" => self.photometric = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Inverse of [`TrainConfig::parse`]; floats use shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("writing to a String");
        };
        put("model", &self.model.name);
        put("width", &self.width);
        put("height", &self.height);
        put("steps", &self.steps);
        put("lr_peak", &self.lr_peak);
        put("warmup_steps", &self.warmup_steps);
        put("accumulation", &self.accumulation);
        put("seed", &self.seed);
        put("top_k_train", &self.detector.top_k);
        put("n_random", &self.n_random);
        put("window", &self.detector.window);
        put("t_det", &self.detector.t_det);
        put("threshold", &self.detector.threshold);
        put("margin", &self.detector.margin);
        put("w_rp", &self.loss.w_rp);
        put("w_pk", &self.loss.w_pk);
        put("w_rl", &self.loss.w_rl);
        put("w_de", &self.loss.w_de);
        put("t_rel", &self.loss.t_rel);
        put("t_des", &self.loss.t_des);
        put("th_gt", &self.loss.th_gt);
        put("norm_p", &self.loss.norm_p);
        put("outlier_bin", &self.loss.outlier_bin);
        put("descriptor_loss", &self.descriptor_mode.name());
        put("triplet_margin", &self.triplet_margin);
        put("checkpoint_every", &self.checkpoint_every);
        put("keep_checkpoints", &self.keep_checkpoints);
        put("photometric", &self.photometric);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TrainConfig> {
        TrainConfig::parse(text.as_bytes(), Path::new("train.cfg"))
    }

    #[test]
    fn defaults_follow_the_training_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_peak, c.warmup_steps, c.accumulation), (3e-3, 500, 16));
        assert_eq!((c.detector.top_k, c.n_random), (400, 400));
        assert_eq!((c.width, c.height), (96, 96));
        assert_eq!(c.detector.window, 5);
        assert_eq!(c.loss, LossConfig::default());
    }

    #[test]
    fn schedule_warms_up_linearly() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(0), 0.0);
        assert_eq!(c.learning_rate(250), 1.5e-3);
        assert_eq!(c.learning_rate(500), 3e-3);
        assert_eq!(c.learning_rate(5000), 3e-3);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let c =
            parse("# toy run\nsteps = 10  # short\n\naccumulation=2\nmodel = small\nphotometric = false\n").unwrap();
        assert_eq!((c.steps, c.accumulation), (10, 2));
        assert_eq!(c.model, ModelConfig::small());
        assert!(!c.photometric);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig {
            lr_peak: 1.2345678901e-3,
            descriptor_mode: DescriptorMode::Triplet,
            ..TrainConfig::default()
        };
        c.loss.t_des = 0.03;
        assert_eq!(parse(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_offending_line() {
        match parse("steps = 3\nbogus = 1\n") {
            Err(Error::Parse { offset, message, .. }) => {
                assert_eq!(offset, 10);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("steps: 3\n"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse("steps = -1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("width = 90\n"), Err(Error::Config(_))));
    }
}
