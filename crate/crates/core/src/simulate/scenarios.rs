use super::scm::{
    CovariateDist, CovariateSpec, DriftSpec, ExternalSpec, OutcomeLink, OutcomeSpec, ScmConfig, TreatmentSpec,
};

pub const SCENARIO_NAMES: [&str; 7] = ["RCT", "G1", "LINEAR", "DRIFT", "POSITIVITY", "HYBRID-OK", "HYBRID-DRIFT"];

fn base(name: &str, covariates: Vec<CovariateSpec>, treatment: TreatmentSpec, outcome: OutcomeSpec) -> ScmConfig {
    ScmConfig {
        name: name.into(),
        covariates,
        treatment,
        observation: None,
        outcome,
        drift: None,
        external: None,
        measurement_error: None,
        calendar_start: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
        period_days: 365,
        seed: 0,
    }
}

fn c1_c2() -> Vec<CovariateSpec> {
    vec![
        CovariateSpec { name: "c1".into(), dist: CovariateDist::Normal { mean: 0.0, sd: 1.0 } },
        CovariateSpec { name: "c2".into(), dist: CovariateDist::Bernoulli { p: 0.5 } },
    ]
}

fn logit_outcome(intercept: f64, coef_a: f64, coefs: Vec<f64>) -> OutcomeSpec {
    OutcomeSpec { link: OutcomeLink::Logit, intercept, coef_a, coefs, interactions: vec![], noise_sd: 1.0 }
}

fn hybrid(name: &str, shift: f64) -> ScmConfig {
    let mut cfg = base(
        name,
        c1_c2(),
        // P(A = 1) = 2/3: about two treated per internal control
        TreatmentSpec { intercept: 2f64.ln(), coefs: vec![0.0, 0.0] },
        OutcomeSpec { link: OutcomeLink::Identity, intercept: 0.3, coef_a: 0.0, coefs: vec![0.0, 0.0], interactions: vec![], noise_sd: 1.0 },
    );
    cfg.external = Some(ExternalSpec { label: "registry".into(), count: 100, outcome_shift: shift });
    cfg
}

/// The shipped scenarios, in a fixed order.
pub fn scenario_library() -> Vec<ScmConfig> {
    SCENARIO_NAMES.iter().map(|n| scenario(n).expect("library names resolve")).collect()
}

/// Looks up a shipped scenario by name.
pub fn scenario(name: &str) -> Option<ScmConfig> {
    let cfg = match name {
        "RCT" => base(
            name,
            c1_c2(),
            TreatmentSpec { intercept: 0.0, coefs: vec![0.0, 0.0] },
            logit_outcome(-0.5, 0.8, vec![0.7, -0.5]),
        ),
        "G1" => base(
            name,
            c1_c2(),
            TreatmentSpec { intercept: -0.2, coefs: vec![0.8, 0.6] },
            logit_outcome(-0.5, 0.8, vec![0.7, -0.5]),
        ),
        "LINEAR" => base(
            name,
            c1_c2(),
            TreatmentSpec { intercept: -0.2, coefs: vec![0.8, 0.6] },
            OutcomeSpec { link: OutcomeLink::Linear, intercept: 0.0, coef_a: 0.3, coefs: vec![1.0, 0.0], interactions: vec![], noise_sd: 1.0 },
        ),
        "DRIFT" => {
            let mut cfg = base(
                name,
                c1_c2(),
                TreatmentSpec { intercept: 0.0, coefs: vec![0.0, 0.0] },
                OutcomeSpec { link: OutcomeLink::Linear, intercept: 0.0, coef_a: 0.3, coefs: vec![1.0, 0.0], interactions: vec![], noise_sd: 1.0 },
            );
            cfg.drift = Some(DriftSpec { trend: 0.2, treated_periods: vec![1], control_periods: vec![0, 1], external_periods: None });
            cfg
        }
        "POSITIVITY" => base(
            name,
            c1_c2(),
            TreatmentSpec { intercept: 0.0, coefs: vec![4.0, 0.0] },
            logit_outcome(-0.5, 0.8, vec![0.7, -0.5]),
        ),
        "HYBRID-OK" => hybrid(name, 0.0),
        "HYBRID-DRIFT" => hybrid(name, 0.15),
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::generate;

    #[test]
    fn library_is_valid_and_named() {
        let lib = scenario_library();
        assert_eq!(lib.len(), SCENARIO_NAMES.len());
        for (cfg, name) in lib.iter().zip(SCENARIO_NAMES) {
            assert_eq!(cfg.name, name);
            cfg.validate().unwrap();
        }
        assert!(scenario("nope").is_none());
        assert!(scenario("RCT").unwrap().treatment.coefs.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn rct_treated_fraction() {
        let (ds, _) = generate(&scenario("RCT").unwrap(), 100_000, 5).unwrap();
        let frac = ds.records().iter().filter(|r| r.treatment.is_treated()).count() as f64 / ds.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn hybrid_external_source() {
        let (ds, _) = generate(&scenario("HYBRID-DRIFT").unwrap(), 150, 5).unwrap();
        let ext: Vec<_> = ds.records().iter().filter(|r| r.source.external).collect();
        assert_eq!(ext.len(), 100);
        assert!(ext.iter().all(|r| !r.treatment.is_treated()));
    }
}
