//! The adaptation method grid: every cell label maps to one combination of
//! normalization variant, statistics source, and optimization setting.

use ttbn_core::adaptation::AdaptConfig;
use ttbn_core::normalization::{BnVariant, RunningMode, StatsSource};

use crate::config::AdaptationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Frozen source statistics, no optimization.
    SourceEval,
    /// Current-batch statistics, no optimization.
    TargetEval,
    /// Testing running statistics, no optimization.
    TrsEval,
    /// Current-batch statistics, entropy minimization, full gradient.
    Tent,
    /// Like Tent but with gradients through the batch statistics stopped.
    TentDetached,
    /// Frozen source statistics with entropy minimization (per-instance
    /// gradient).
    FrozenOpt,
    /// Gradient-preserving layer normalizing with source statistics.
    GpreBnSource,
    /// Gradient-preserving layer normalizing with current-batch statistics;
    /// collapses to Tent.
    GpreBnCurrent,
    /// Gradient-preserving layer with testing running statistics (CMA).
    GpreBnTrs,
    /// Gradient-preserving layer with testing running statistics (EMA).
    GpreBnTrsEma,
    /// Gradient-preserving layer with the theta-mixture of running tracks.
    GpreBnMix,
    /// Theta-mixture plus the centroid classifier on penultimate features.
    GpreBnMixRt3a,
}

pub const DEFAULT_METHODS: [Method; 8] = [
    Method::SourceEval,
    Method::TargetEval,
    Method::Tent,
    Method::TentDetached,
    Method::GpreBnCurrent,
    Method::GpreBnTrs,
    Method::GpreBnMix,
    Method::GpreBnMixRt3a,
];

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::SourceEval => "source-eval",
            Method::TargetEval => "target-eval",
            Method::TrsEval => "trs-eval",
            Method::Tent => "tent",
            Method::TentDetached => "tent-de",
            Method::FrozenOpt => "bn-frozen-opt",
            Method::GpreBnSource => "gprebn-source",
            Method::GpreBnCurrent => "gprebn-current",
            Method::GpreBnTrs => "gprebn-trs",
            Method::GpreBnTrsEma => "gprebn-trs-ema",
            Method::GpreBnMix => "gprebn-mix",
            Method::GpreBnMixRt3a => "gprebn-mix-rt3a",
        }
    }

    pub fn from_label(label: &str) -> Option<Method> {
        [
            Method::SourceEval,
            Method::TargetEval,
            Method::TrsEval,
            Method::Tent,
            Method::TentDetached,
            Method::FrozenOpt,
            Method::GpreBnSource,
            Method::GpreBnCurrent,
            Method::GpreBnTrs,
            Method::GpreBnTrsEma,
            Method::GpreBnMix,
            Method::GpreBnMixRt3a,
        ]
        .into_iter()
        .find(|m| m.label() == label)
    }

    /// Instantiate the adaptation engine configuration for this cell.
    pub fn adapt_config(&self, base: &AdaptationConfig) -> AdaptConfig {
        let optimized = AdaptConfig {
            rho: base.rho,
            delta: base.delta,
            theta: base.theta,
            base_lr: base.base_lr,
            episodic: base.episodic,
            trs_mode: RunningMode::Cma,
            use_rt3a: false,
            layer_sources: None,
            variant: BnVariant::GpreBn,
            stats_source: StatsSource::TestingRunning,
        };
        match self {
            Method::SourceEval => AdaptConfig {
                rho: 0.0,
                variant: BnVariant::FrozenEval,
                stats_source: StatsSource::SourceRunning,
                ..optimized
            },
            Method::TargetEval => AdaptConfig {
                rho: 0.0,
                variant: BnVariant::StandardTrain,
                stats_source: StatsSource::CurrentBatch,
                ..optimized
            },
            Method::TrsEval => AdaptConfig {
                rho: 0.0,
                variant: BnVariant::GpreBn,
                stats_source: StatsSource::TestingRunning,
                ..optimized
            },
            Method::Tent => AdaptConfig {
                variant: BnVariant::StandardTrain,
                stats_source: StatsSource::CurrentBatch,
                ..optimized
            },
            Method::TentDetached => AdaptConfig {
                variant: BnVariant::DetachedStats,
                stats_source: StatsSource::CurrentBatch,
                ..optimized
            },
            Method::FrozenOpt => AdaptConfig {
                variant: BnVariant::FrozenEval,
                stats_source: StatsSource::SourceRunning,
                ..optimized
            },
            Method::GpreBnSource => AdaptConfig {
                variant: BnVariant::GpreBn,
                stats_source: StatsSource::SourceRunning,
                ..optimized
            },
            Method::GpreBnCurrent => AdaptConfig {
                variant: BnVariant::GpreBn,
                stats_source: StatsSource::CurrentBatch,
                ..optimized
            },
            Method::GpreBnTrs => optimized,
            Method::GpreBnTrsEma => AdaptConfig {
                trs_mode: RunningMode::Ema {
                    momentum: base.ema_momentum,
                },
                ..optimized
            },
            Method::GpreBnMix => AdaptConfig {
                stats_source: StatsSource::ThetaMixture { theta: base.theta },
                ..optimized
            },
            Method::GpreBnMixRt3a => AdaptConfig {
                stats_source: StatsSource::ThetaMixture { theta: base.theta },
                use_rt3a: true,
                ..optimized
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for method in [
            Method::SourceEval,
            Method::TargetEval,
            Method::TrsEval,
            Method::Tent,
            Method::TentDetached,
            Method::FrozenOpt,
            Method::GpreBnSource,
            Method::GpreBnCurrent,
            Method::GpreBnTrs,
            Method::GpreBnTrsEma,
            Method::GpreBnMix,
            Method::GpreBnMixRt3a,
        ] {
            assert_eq!(Method::from_label(method.label()), Some(method));
        }
        assert_eq!(Method::from_label("nope"), None);
    }

    #[test]
    fn eval_methods_use_zero_rho() {
        let base = AdaptationConfig::default();
        for method in [Method::SourceEval, Method::TargetEval, Method::TrsEval] {
            assert_eq!(method.adapt_config(&base).rho, 0.0);
        }
        assert!(Method::Tent.adapt_config(&base).rho > 0.0);
    }
}
