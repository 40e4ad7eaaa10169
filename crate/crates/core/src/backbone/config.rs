use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channel widths of the four encoder blocks, descriptor width and head depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub name: String,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub dim: usize,
    pub n_head: usize,
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 4] = ["tiny", "small", "normal", "large"];

    pub fn new(name: &str, [c1, c2, c3, c4]: [usize; 4], dim: usize, n_head: usize) -> Result<Self> {
        let cfg = Self {
            name: name.to_owned(),
            c1,
            c2,
            c3,
            c4,
            dim,
            n_head,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tiny() -> Self {
        Self::new("tiny", [8, 16, 32, 64], 64, 1).expect("valid preset")
    }

    pub fn small() -> Self {
        Self::new("small", [8, 16, 48, 96], 96, 1).expect("valid preset")
    }

    pub fn normal() -> Self {
        Self::new("normal", [16, 32, 64, 128], 128, 1).expect("valid preset")
    }

    pub fn large() -> Self {
        Self::new("large", [32, 64, 128, 128], 128, 2).expect("valid preset")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            "normal" => Some(Self::normal()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn channels(&self) -> [usize; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels().contains(&0) || self.dim == 0 {
            return Err(Error::Config(format!("{}: channel counts must be positive", self.name)));
        }
        if !self.dim.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "{}: dim {} is not divisible by 4",
                self.name, self.dim
            )));
        }
        if !(1..=2).contains(&self.n_head) {
            return Err(Error::Config(format!(
                "{}: n_head must be 1 or 2, got {}",
                self.name, self.n_head
            )));
        }
        Ok(())
    }

    /// Identifies the preset with these widths, if any.
    pub(crate) fn with_preset_name(mut self) -> Self {
        self.name = Self::PRESETS
            .iter()
            .filter_map(|p| Self::preset(p))
            .find(|p| p.channels() == self.channels() && p.dim == self.dim && p.n_head == self.n_head)
            .map(|p| p.name)
            .unwrap_or_else(|| "custom".to_owned());
        self
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s).ok_or_else(|| {
            Error::Config(format!(
                "unknown model preset {s:?}; expected one of {}",
                Self::PRESETS.join(", ")
            ))
        })
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (c={}/{}/{}/{}, dim={}, n_head={})",
            self.name, self.c1, self.c2, self.c3, self.c4, self.dim, self.n_head
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_the_published_table() {
        let rows = [
            (ModelConfig::tiny(), [8, 16, 32, 64], 64, 1),
            (ModelConfig::small(), [8, 16, 48, 96], 96, 1),
            (ModelConfig::normal(), [16, 32, 64, 128], 128, 1),
            (ModelConfig::large(), [32, 64, 128, 128], 128, 2),
        ];
        for (cfg, ch, dim, head) in rows {
            assert_eq!(cfg.channels(), ch);
            assert_eq!((cfg.dim, cfg.n_head), (dim, head));
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(ModelConfig::new("x", [8, 16, 32, 64], 62, 1).is_err());
        assert!(ModelConfig::new("x", [0, 16, 32, 64], 64, 1).is_err());
        assert!("bogus".parse::<ModelConfig>().is_err());
        assert_eq!("normal".parse::<ModelConfig>().unwrap(), ModelConfig::normal());
    }
}
