//! Run configuration: a TOML file validated against a closed schema, then
//! adjusted by command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ratetip::canard::{MaximalOptions, SHADOW_TUBE};
use ratetip::flow::IntegratorSettings;
use ratetip::model::{builtin_system, ForcingKind, ForcingProfile, SystemDefinition};
use ratetip::poly::Poly3;
use ratetip::scan::{CriticalRateSearch, GridSpec, Side, TransectOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub forcing: ForcingSpec,
    pub integrator: IntegratorSettings,
    pub scan: ScanSpec,
    pub trajectory: TrajectorySpec,
    pub critical_rate: CriticalRateSpec,
    pub canards: CanardSpec,
    pub output: OutputSpec,
    /// 0 means one worker per available core.
    pub workers: usize,
    /// Results never depend on the worker count; the flag is echoed into run metadata.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::default(),
            forcing: ForcingSpec::default(),
            integrator: IntegratorSettings::default(),
            scan: ScanSpec::default(),
            trajectory: TrajectorySpec::default(),
            critical_rate: CriticalRateSpec::default(),
            canards: CanardSpec::default(),
            output: OutputSpec::default(),
            workers: 0,
            deterministic: true,
        }
    }
}

/// A built-in system by name, or custom polynomials given as `[i, j, k, c]`
/// terms meaning `c x^i y^j lambda^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub f: Option<Poly3>,
    pub g: Option<Poly3>,
    pub delta: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            name: "paper-example".into(),
            f: None,
            g: None,
            delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    pub lambda_max: f64,
    pub epsilon: f64,
    pub tau_domain: Option<(f64, f64)>,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self {
            kind: ForcingKind::LogisticTanh,
            lambda_max: 2.5,
            epsilon: 0.204,
            tau_domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub x_range: (f64, f64),
    pub n_x: usize,
    pub lambda_range: (f64, f64),
    pub n_lambda: usize,
    pub side: Side,
    pub transect: Option<f64>,
    pub transect_x_range: Option<(f64, f64)>,
    pub transect_options: TransectOptions,
    pub svg: bool,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            x_range: (-2.5, 0.45),
            n_x: 200,
            lambda_range: (-2.45, 2.45),
            n_lambda: 200,
            side: Side::Sa,
            transect: None,
            transect_x_range: None,
            transect_options: TransectOptions::default(),
            svg: true,
        }
    }
}

impl ScanSpec {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            x_range: self.x_range,
            n_x: self.n_x,
            lambda_range: self.lambda_range,
            n_lambda: self.n_lambda,
            side: self.side,
        }
    }

    pub fn transect_range(&self) -> (f64, f64) {
        self.transect_x_range.unwrap_or(self.x_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub x0: f64,
    pub lambda0: f64,
    /// Integrate the reduced flow on `S` instead of the full system.
    pub reduced: bool,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            x0: 0.0,
            lambda0: -0.7,
            reduced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalRateSpec {
    pub bracket: (f64, f64),
    /// Also bisect the full system for the empirical rate at each of `deltas`.
    pub empirical: bool,
    /// Defaults to the system's own delta.
    pub deltas: Vec<f64>,
    pub search: CriticalRateSearch,
}

impl Default for CriticalRateSpec {
    fn default() -> Self {
        Self {
            bracket: (0.05, 1.0),
            empirical: false,
            deltas: Vec::new(),
            search: CriticalRateSearch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanardSpec {
    pub maximal: MaximalOptions,
    pub tube: f64,
    /// Boundary refinement for canard seeds; narrow bands can be ~1e-9 wide.
    pub refine_tol: f64,
}

impl Default for CanardSpec {
    fn default() -> Self {
        Self {
            maximal: MaximalOptions::default(),
            tube: SHADOW_TUBE,
            refine_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from(".") }
    }
}

/// Schema or I/O problem with a config file; the message carries line and column.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(text, s.start);
                    format!("{origin}:{line}:{col}: ")
                })
                .unwrap_or_else(|| format!("{origin}: "));
            ConfigError(format!("{location}{}", e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: cannot read config: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_system(&self) -> ratetip::Result<SystemDefinition> {
        match (&self.system.f, &self.system.g) {
            (Some(f), Some(g)) => SystemDefinition::new(self.system.name.clone(), f.clone(), g.clone(), self.system.delta),
            (None, None) => builtin_system(&self.system.name, self.system.delta),
            _ => Err(ratetip::Error::Invalid(
                "custom systems need both `f` and `g` polynomials".into(),
            )),
        }
    }

    pub fn build_forcing(&self) -> ratetip::Result<ForcingProfile> {
        let f = &self.forcing;
        match f.tau_domain {
            Some((lo, hi)) => ForcingProfile::with_domain(f.kind, f.lambda_max, f.epsilon, lo, hi),
            None => ForcingProfile::new(f.kind, f.lambda_max, f.epsilon),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml(), "x").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_located() {
        let text = "[forcing]\nepsilon = 0.2\nepsilom = 0.3\n";
        let err = RunConfig::parse(text, "run.toml").unwrap_err().0;
        assert!(err.starts_with("run.toml:3:1: "), "{err}");
        assert!(err.contains("epsilom"), "{err}");
    }

    #[test]
    fn custom_polynomials() {
        let text = "[system]\nname = \"cubic\"\nf = [[2, 0, 0, 1.0], [1, 0, 0, -1.0], [0, 1, 0, 1.0], [0, 0, 1, 1.0]]\ng = [[1, 0, 0, -1.0]]\n";
        let c = RunConfig::parse(text, "x").unwrap();
        let sys = c.build_system().unwrap();
        assert_eq!(sys.f(1.0, 2.0, 3.0), 5.0);
        let half = "[system]\nf = [[2, 0, 0, 1.0]]\n";
        assert!(RunConfig::parse(half, "x").unwrap().build_system().is_err());
    }
}
