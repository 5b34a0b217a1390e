//! Named coefficient estimators, selectable at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::pipeline::{EstimationContext, Target};

/// A coefficient estimator evaluated on a shared [`EstimationContext`].
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// The pseudo-true vector the estimator is designed to be centred on.
    fn default_target(&self) -> Target;

    /// Whether evaluating the estimator runs the jackknife.
    fn needs_jackknife(&self) -> bool {
        false
    }

    fn estimate(&self, ctx: &mut EstimationContext<'_>) -> Result<DVector<f64>>;
}

/// Plain least squares on the PC factors.
pub struct LeastSquares;

impl Estimator for LeastSquares {
    fn name(&self) -> &'static str {
        "ls"
    }
    fn default_target(&self) -> Target {
        Target::Delta0
    }
    fn estimate(&self, ctx: &mut EstimationContext<'_>) -> Result<DVector<f64>> {
        Ok(ctx.fit.delta_hat.clone())
    }
}

/// `delta_hat - kappa_hat`.
pub struct BiasCorrectedHhat;

impl Estimator for BiasCorrectedHhat {
    fn name(&self) -> &'static str {
        "bcHhat"
    }
    fn default_target(&self) -> Target {
        Target::DeltaHhat
    }
    fn estimate(&self, ctx: &mut EstimationContext<'_>) -> Result<DVector<f64>> {
        Ok(ctx.analytic()?.delta_bc_hhat.clone())
    }
}

/// `delta_hat - kappa_bar_hat`.
pub struct BiasCorrectedHhatQ;

impl Estimator for BiasCorrectedHhatQ {
    fn name(&self) -> &'static str {
        "bcHhatq"
    }
    fn default_target(&self) -> Target {
        Target::DeltaHhatQ
    }
    fn estimate(&self, ctx: &mut EstimationContext<'_>) -> Result<DVector<f64>> {
        Ok(ctx.analytic()?.delta_bc_hhat_q.clone())
    }
}

/// Randomized split-panel jackknife.
pub struct Jackknife;

impl Estimator for Jackknife {
    fn name(&self) -> &'static str {
        "bcjk"
    }
    fn default_target(&self) -> Target {
        Target::Delta0
    }
    fn needs_jackknife(&self) -> bool {
        true
    }
    fn estimate(&self, ctx: &mut EstimationContext<'_>) -> Result<DVector<f64>> {
        Ok(ctx.jackknife()?.0.clone())
    }
}

/// Estimators keyed by name.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<&'static str, Arc<dyn Estimator>>,
    order: Vec<&'static str>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(LeastSquares));
        reg.register(Arc::new(Jackknife));
        reg.register(Arc::new(BiasCorrectedHhatQ));
        reg.register(Arc::new(BiasCorrectedHhat));
        reg
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
            order: Vec::new(),
        }
    }

    /// Adds or replaces an estimator under its own name.
    pub fn register(&mut self, est: Arc<dyn Estimator>) {
        let name = est.name();
        if self.entries.insert(name, est).is_none() {
            self.order.push(name);
        }
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Estimator>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::config(
                "estimators",
                format!("unknown estimator '{name}', available: {}", self.order.join(", ")),
            )
        })
    }

    /// Names in registration order.
    pub fn names(&self) -> &[&'static str] {
        &self.order
    }

    /// Looks up several names, preserving the requested order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Arc<dyn Estimator>>> {
        names.iter().map(|n| self.get(n.as_ref())).collect()
    }
}
