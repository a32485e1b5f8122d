use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Defense;
use crate::error::{invalid, CoreError, Result};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackCell {
    pub kind: String,
    pub epsilon: Rational,
    pub iterations: usize,
}

/// One row of the result grid. Renders as
/// `<variant>__<defense>__clean` or
/// `<variant>__<defense>__<attack>__eps<num>-<den>__it<iterations>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: String,
    pub defense: Defense,
    /// `None` for clean evaluation.
    pub attack: Option<AttackCell>,
}

const SEP: &str = "__";
const PANEL_PREFIX: &str = "panel__";
const PANEL_SUFFIX: &str = ".png";

impl CellKey {
    pub fn clean(variant: &str, defense: Defense) -> Self {
        Self {
            variant: variant.to_string(),
            defense,
            attack: None,
        }
    }

    pub fn attacked(variant: &str, defense: Defense, kind: &str, epsilon: Rational, iterations: usize) -> Self {
        Self {
            variant: variant.to_string(),
            defense,
            attack: Some(AttackCell {
                kind: kind.to_string(),
                epsilon,
                iterations,
            }),
        }
    }

    pub fn panel_filename(&self) -> String {
        format!("{PANEL_PREFIX}{self}{PANEL_SUFFIX}")
    }

    pub fn from_panel_filename(name: &str) -> Result<Self> {
        name.strip_prefix(PANEL_PREFIX)
            .and_then(|s| s.strip_suffix(PANEL_SUFFIX))
            .ok_or_else(|| invalid("panel file name", format!("`{name}` is not a panel file name")))?
            .parse()
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{SEP}{}", self.variant, self.defense)?;
        match &self.attack {
            None => write!(f, "{SEP}clean"),
            Some(a) => write!(
                f,
                "{SEP}{}{SEP}eps{}-{}{SEP}it{}",
                a.kind, a.epsilon.num, a.epsilon.den, a.iterations
            ),
        }
    }
}

impl FromStr for CellKey {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid("cell key", format!("cannot parse `{s}`"));
        let parts: Vec<&str> = s.split(SEP).collect();
        match parts.as_slice() {
            [variant, defense, "clean"] if !variant.is_empty() => Ok(Self::clean(variant, defense.parse()?)),
            [variant, defense, kind, eps, it] if !variant.is_empty() && !kind.is_empty() => {
                let (num, den) = eps.strip_prefix("eps").and_then(|e| e.split_once('-')).ok_or_else(bad)?;
                let epsilon = Rational::new(num.parse().map_err(|_| bad())?, den.parse().map_err(|_| bad())?)?;
                let iterations = it.strip_prefix("it").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                Ok(Self::attacked(variant, defense.parse()?, kind, epsilon, iterations))
            }
            _ => Err(bad()),
        }
    }
}
