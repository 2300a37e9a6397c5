//! Behavior taxonomy and the trainable slope parameters.
//!
//! Every annotated behavior maps to a normal distribution over the engagement
//! slope (engagement units per second). Three behaviors are *dependent*: their
//! slope is coupled to what co-present users are doing at the same time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observable user behavior category.
///
/// Declaration order is the canonical table order and drives `Ord`, so maps
/// keyed by `Behavior` serialize in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Behavior {
    Prowl,
    Gaze,
    LookAround,
    DoingOthers,
    Pointing,
    TalkToRobot,
    Touch,
    WaveHands,
}

impl Behavior {
    pub const COUNT: usize = 8;

    pub const ALL: [Behavior; Behavior::COUNT] = [
        Behavior::Prowl,
        Behavior::Gaze,
        Behavior::LookAround,
        Behavior::DoingOthers,
        Behavior::Pointing,
        Behavior::TalkToRobot,
        Behavior::Touch,
        Behavior::WaveHands,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Prowl => "Prowl",
            Behavior::Gaze => "Gaze",
            Behavior::LookAround => "LookAround",
            Behavior::DoingOthers => "DoingOthers",
            Behavior::Pointing => "Pointing",
            Behavior::TalkToRobot => "TalkToRobot",
            Behavior::Touch => "Touch",
            Behavior::WaveHands => "WaveHands",
        }
    }

    /// Whether the slope of this behavior is influenced by co-present users.
    pub fn is_dependent(self) -> bool {
        matches!(
            self,
            Behavior::Prowl | Behavior::LookAround | Behavior::DoingOthers
        )
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBehavior(s.to_owned()))
    }
}

/// Normal distribution over an engagement slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    mean: f64,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter {
                field: "mean".into(),
                reason: format!("mean must be finite, got {mean}"),
            });
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidParameter {
                field: "variance".into(),
                reason: "variance must be positive".into(),
            });
        }
        Ok(Self { mean, variance })
    }

    /// Constructor for values already known to satisfy the invariants.
    pub(crate) fn new_unchecked(mean: f64, variance: f64) -> Self {
        debug_assert!(mean.is_finite() && variance > 0.0);
        Self { mean, variance }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }
}

/// Per-behavior slope distributions plus the likelihood constant and the
/// duration cap. Immutable once built; derive new sets with [`ParameterSet::with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParameterFile", into = "ParameterFile")]
pub struct ParameterSet {
    per_behavior: [GaussianParams; Behavior::COUNT],
    alpha: f64,
    t_max: f64,
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_T_MAX: f64 = 1800.0;
pub const INITIAL_MEAN: f64 = -0.15;
pub const INITIAL_VARIANCE: f64 = 0.1;

impl ParameterSet {
    pub fn new(per_behavior: [GaussianParams; Behavior::COUNT], alpha: f64, t_max: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter {
                field: "alpha".into(),
                reason: format!("alpha must be positive, got {alpha}"),
            });
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::InvalidParameter {
                field: "t_max".into(),
                reason: format!("t_max must be positive, got {t_max}"),
            });
        }
        Ok(Self {
            per_behavior,
            alpha,
            t_max,
        })
    }

    /// Uniform initialization used as the training starting point.
    pub fn initial() -> Self {
        let g = GaussianParams::new_unchecked(INITIAL_MEAN, INITIAL_VARIANCE);
        Self {
            per_behavior: [g; Behavior::COUNT],
            alpha: DEFAULT_ALPHA,
            t_max: DEFAULT_T_MAX,
        }
    }

    /// Published parameters trained with dependence enabled on the
    /// shopping-mall field data.
    pub fn reference() -> Self {
        let table = [
            (-0.012, 0.279e-6),
            (-0.800e-2, 0.180e-2),
            (-0.011, 1.000e-6),
            (-0.010, 0.347e-3),
            (-0.130, 0.095),
            (-0.128, 0.095),
            (-0.118, 0.115),
            (-0.157, 0.093),
        ];
        Self {
            per_behavior: table.map(|(m, v)| GaussianParams::new_unchecked(m, v)),
            alpha: DEFAULT_ALPHA,
            t_max: DEFAULT_T_MAX,
        }
    }

    pub fn get(&self, behavior: Behavior) -> GaussianParams {
        self.per_behavior[behavior.index()]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn iter(&self) -> impl Iterator<Item = (Behavior, GaussianParams)> + '_ {
        Behavior::ALL.into_iter().map(|b| (b, self.get(b)))
    }

    pub fn with(&self, behavior: Behavior, params: GaussianParams) -> Self {
        let mut next = self.clone();
        next.per_behavior[behavior.index()] = params;
        next
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.per_behavior, alpha, self.t_max)
    }

    pub fn with_t_max(&self, t_max: f64) -> Result<Self> {
        Self::new(self.per_behavior, self.alpha, t_max)
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e: toml::de::Error| e.message().to_owned())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("parameter file serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|m| Error::parse(path, m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::initial()
    }
}

/// On-disk shape of a parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ParameterFile {
    pub alpha: f64,
    pub t_max: f64,
    pub behaviors: BTreeMap<Behavior, GaussianRecord>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) struct GaussianRecord {
    pub mean: f64,
    pub variance: f64,
}

impl From<ParameterSet> for ParameterFile {
    fn from(params: ParameterSet) -> Self {
        Self::from(&params)
    }
}

impl From<&ParameterSet> for ParameterFile {
    fn from(params: &ParameterSet) -> Self {
        Self {
            alpha: params.alpha,
            t_max: params.t_max,
            behaviors: params
                .iter()
                .map(|(b, g)| {
                    (
                        b,
                        GaussianRecord {
                            mean: g.mean,
                            variance: g.variance,
                        },
                    )
                })
                .collect(),
        }
    }
}

impl TryFrom<ParameterFile> for ParameterSet {
    type Error = Error;

    fn try_from(file: ParameterFile) -> Result<Self> {
        let mut per_behavior = [GaussianParams::new_unchecked(INITIAL_MEAN, INITIAL_VARIANCE); Behavior::COUNT];
        for behavior in Behavior::ALL {
            let record = file
                .behaviors
                .get(&behavior)
                .ok_or(Error::MissingCategory(behavior))?;
            per_behavior[behavior.index()] =
                GaussianParams::new(record.mean, record.variance).map_err(|e| match e {
                    Error::InvalidParameter { field, reason } => Error::InvalidParameter {
                        field: format!("behaviors.{behavior}.{field}"),
                        reason,
                    },
                    other => other,
                })?;
        }
        ParameterSet::new(per_behavior, file.alpha, file.t_max)
    }
}
