use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Number of iterations over which the relative loss change is measured.
pub const CONVERGENCE_WINDOW: usize = 10;

/// Optimizer and model settings for one registration.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationConfig {
    pub weights: LossWeights,
    /// Number of refinement steps optimized (one field each).
    pub steps: usize,
    /// Steps applied when producing the result; defaults to `steps`.
    pub inference_steps: Option<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Control-grid spacing of the optimized fields, in voxels.
    pub control_stride: usize,
    pub seed: u64,
    /// Stop once the relative change of the total loss over
    /// [`CONVERGENCE_WINDOW`] iterations drops below this.
    pub convergence_tol: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            weights: LossWeights::default(),
            steps: 2,
            inference_steps: None,
            iterations: 500,
            learning_rate: 1e-2,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            control_stride: 4,
            seed: 0,
            convergence_tol: 1e-6,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if let Some(k) = self.inference_steps {
            if k == 0 || k > self.steps {
                return bad("inference_steps must be between 1 and steps");
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad("adam_eps must be positive");
        }
        if self.control_stride == 0 {
            return bad("control_stride must be >= 1");
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return bad("convergence_tol must be >= 0");
        }
        Ok(())
    }

    pub fn inference_steps(&self) -> usize {
        self.inference_steps.unwrap_or(self.steps)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        let cfg = RegistrationConfig::from(file);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            alpha: self.weights.alpha,
            beta: self.weights.beta,
            gamma: self.weights.gamma,
            delta: self.weights.delta,
            epsilon: self.weights.epsilon,
            steps: self.steps,
            inference_steps: self.inference_steps,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            adam_betas: [self.adam_betas.0, self.adam_betas.1],
            adam_eps: self.adam_eps,
            control_stride: self.control_stride,
            seed: self.seed,
            convergence_tol: self.convergence_tol,
        }
    }
}

/// JSON form of [`RegistrationConfig`]. Every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_steps: Option<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub control_stride: usize,
    pub seed: u64,
    pub convergence_tol: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        RegistrationConfig::default().to_file()
    }
}

impl From<ConfigFile> for RegistrationConfig {
    fn from(f: ConfigFile) -> Self {
        RegistrationConfig {
            weights: LossWeights {
                alpha: f.alpha,
                beta: f.beta,
                gamma: f.gamma,
                delta: f.delta,
                epsilon: f.epsilon,
            },
            steps: f.steps,
            inference_steps: f.inference_steps,
            iterations: f.iterations,
            learning_rate: f.learning_rate,
            adam_betas: (f.adam_betas[0], f.adam_betas[1]),
            adam_eps: f.adam_eps,
            control_stride: f.control_stride,
            seed: f.seed,
            convergence_tol: f.convergence_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RegistrationConfig::default();
        assert_eq!(c.weights.as_array(), [1.0, 1.0, 0.1, 0.01, 10.0]);
        assert_eq!((c.steps, c.iterations, c.control_stride), (2, 500, 4));
        assert_eq!(c.learning_rate, 1e-2);
        assert_eq!(c.convergence_tol, 1e-6);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_partial_json() {
        let c = RegistrationConfig::from_json_str(r#"{"alpha": 2.0, "steps": 1, "iterations": 7}"#).unwrap();
        assert_eq!(c.weights.alpha, 2.0);
        assert_eq!(c.weights.epsilon, 10.0);
        assert_eq!((c.steps, c.iterations), (1, 7));

        let round = RegistrationConfig::from_json_str(&serde_json::to_string(&c.to_file()).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            r#"{"steps": 0}"#,
            r#"{"learning_rate": 0}"#,
            r#"{"gamma": -1}"#,
            r#"{"control_stride": 0}"#,
            r#"{"steps": 1, "inference_steps": 2}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"alpha": "x"}"#,
        ] {
            assert!(RegistrationConfig::from_json_str(text).is_err(), "{text}");
        }
    }
}
