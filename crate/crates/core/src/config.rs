//! Run configuration: TOML with the churn rate given as an arithmetic
//! expression over `n`.

use evalexpr::{
    ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes, EvalexprError,
    Function, HashMapContext, Value,
};
use serde::{Deserialize, Serialize};

use crate::adversary::{
    gen_queries, gen_schedule, rate_cap, AdversaryError, ScheduleParams, Strategy,
};
use crate::maintenance::{MaintenanceError, SimParams, Simulation};

/// Optional overrides of the model constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub c_msg: Option<f64>,
    pub c_cycle: Option<f64>,
    pub beta_boot: Option<f64>,
    pub c_churn: Option<f64>,
    pub c_comm: Option<f64>,
    pub c_lo: Option<f64>,
    pub c_hi: Option<f64>,
    pub alpha_r: Option<f64>,
    pub beta_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub seed_adv: u64,
    pub seed_alg: u64,
    pub churn_rate_expr: String,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    pub horizon_cycles: u64,
    #[serde(default)]
    pub query_density: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub constants: Constants,
}

fn default_strategy() -> Strategy {
    Strategy::UniformRandom
}

fn default_p() -> f64 {
    0.5
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Maintenance(#[from] MaintenanceError),
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

/// Evaluates `expr` with `n` bound and `log2` available; the result is
/// floored.
pub fn eval_rate(expr: &str, n: usize) -> Result<usize, String> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    ctx.set_value("n".into(), Value::Float(n as f64))
        .map_err(|e| e.to_string())?;
    ctx.set_function(
        "log2".into(),
        Function::new(|v: &Value<DefaultNumericTypes>| Ok(Value::Float(v.as_number()?.log2()))),
    )
    .map_err(|e| e.to_string())?;
    let x =
        evalexpr::eval_number_with_context(expr, &ctx).map_err(|e: EvalexprError| e.to_string())?;
    if !x.is_finite() || x < 0.0 {
        return Err(format!("evaluates to {x}"));
    }
    Ok(x.floor() as usize)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(field("n", "must be at least 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(field("p", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.query_density) {
            return Err(field("query_density", "must lie in [0, 1]"));
        }
        let c = &self.constants;
        for (name, v) in [
            ("constants.c_msg", c.c_msg),
            ("constants.c_cycle", c.c_cycle),
            ("constants.beta_boot", c.beta_boot),
            ("constants.c_churn", c.c_churn),
            ("constants.c_comm", c.c_comm),
            ("constants.c_lo", c.c_lo),
            ("constants.c_hi", c.c_hi),
            ("constants.alpha_r", c.alpha_r),
            ("constants.beta_r", c.beta_r),
        ] {
            if v.is_some_and(|x| !(x.is_finite() && x > 0.0)) {
                return Err(field(name, "must be a positive number"));
            }
        }
        let rate = self.churn_rate()?;
        let cap = rate_cap(self.n, self.c_churn());
        if rate > cap {
            return Err(AdversaryError::RateTooHigh { rate, cap }.into());
        }
        Ok(())
    }

    pub fn churn_rate(&self) -> Result<usize, ConfigError> {
        eval_rate(&self.churn_rate_expr, self.n).map_err(|m| field("churn_rate_expr", m))
    }

    fn c_churn(&self) -> f64 {
        self.constants.c_churn.unwrap_or(1.0)
    }

    pub fn params(&self) -> SimParams {
        let mut p = SimParams::new(self.n);
        let c = &self.constants;
        p.p = self.p;
        p.c_msg = c.c_msg.unwrap_or(p.c_msg);
        p.c_cycle = c.c_cycle.unwrap_or(p.c_cycle);
        p.beta_boot = c.beta_boot.unwrap_or(p.beta_boot);
        let s = &mut p.spartan;
        s.c_comm = c.c_comm.unwrap_or(s.c_comm);
        s.c_lo = c.c_lo.unwrap_or(s.c_lo);
        s.c_hi = c.c_hi.unwrap_or(s.c_hi);
        s.alpha_r = c.alpha_r.unwrap_or(s.alpha_r);
        s.beta_r = c.beta_r.unwrap_or(s.beta_r);
        p
    }

    /// Schedule horizon: bootstrap plus one budget per cycle and one spare.
    pub fn schedule_params(&self) -> Result<ScheduleParams, ConfigError> {
        let params = self.params();
        let horizon = params.bootstrap_rounds() + (self.horizon_cycles + 1) * params.cycle_budget();
        let mut sp = ScheduleParams::new(
            self.n,
            self.churn_rate()?,
            horizon,
            params.bootstrap_rounds(),
            self.strategy,
        );
        sp.c_churn = self.c_churn();
        Ok(sp)
    }

    /// Freezes the schedule and workload, then opens the simulation.
    pub fn build(&self) -> Result<Simulation, ConfigError> {
        self.validate()?;
        let schedule = gen_schedule(self.seed_adv, &self.schedule_params()?)?;
        let workload = gen_queries(self.seed_adv, &schedule, self.query_density);
        Ok(Simulation::new(
            self.params(),
            schedule,
            workload,
            self.seed_alg,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
n = 256
seed_adv = 1
seed_alg = 2
churn_rate_expr = "n/(10*log2(n)^2)"
horizon_cycles = 3
"#;

    #[test]
    fn rate_expressions() {
        assert_eq!(eval_rate("n/(10*log2(n)^2)", 1024).unwrap(), 1);
        assert_eq!(eval_rate("n/log2(n)", 1024).unwrap(), 102);
        assert_eq!(eval_rate("3", 64).unwrap(), 3);
        assert!(eval_rate("n/", 64).is_err());
        assert!(eval_rate("0 - n", 64).is_err());
    }

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml(SMALL).unwrap();
        assert_eq!(
            (c.strategy, c.p, c.query_density),
            (Strategy::UniformRandom, 0.5, 0.0)
        );
        assert_eq!(c.churn_rate().unwrap(), 0);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn field_errors_name_the_field() {
        let bad = SMALL.replace("n = 256", "n = 0");
        assert!(RunConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("`n`"));
        let bad = format!("{SMALL}p = 1.5\n");
        assert!(RunConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("`p`"));
        let bad = format!("{SMALL}[constants]\nc_msg = -1\n");
        assert!(RunConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("constants.c_msg"));
        let bad = SMALL.replace("log2(n)^2)", "lg(n))");
        assert!(RunConfig::from_toml(&bad)
            .unwrap_err()
            .to_string()
            .contains("churn_rate_expr"));
        assert!(matches!(
            RunConfig::from_toml("n = 3\nbogus = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn rate_above_cap_is_rejected() {
        let bad = SMALL.replace("n/(10*log2(n)^2)", "n/2");
        let err = RunConfig::from_toml(&bad).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Adversary(AdversaryError::RateTooHigh { rate: 128, cap: 32 })
        ));
    }
}
