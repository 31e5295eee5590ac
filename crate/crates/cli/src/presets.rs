//! Built-in configs, compiled from the files under `configs/`.

use crate::error::CliError;

/// Run presets: name and TOML text.
pub const RUN_PRESETS: &[(&str, &str)] = &[
    ("diabetes-500gen", include_str!("../../../configs/run/diabetes-500gen.toml")),
    ("diabetes-tournament-500gen", include_str!("../../../configs/run/diabetes-tournament-500gen.toml")),
    ("hybrid-staged", include_str!("../../../configs/run/hybrid-staged.toml")),
    ("koza1-pimp-node-replacement", include_str!("../../../configs/run/koza1-pimp-node-replacement.toml")),
    ("koza1-pimp-none", include_str!("../../../configs/run/koza1-pimp-none.toml")),
    ("koza1-pimp-subtree", include_str!("../../../configs/run/koza1-pimp-subtree.toml")),
    ("koza1-tournament-subtree", include_str!("../../../configs/run/koza1-tournament-subtree.toml")),
    ("nguyen6-pimp-subtree", include_str!("../../../configs/run/nguyen6-pimp-subtree.toml")),
    ("nguyen6-tournament-subtree", include_str!("../../../configs/run/nguyen6-tournament-subtree.toml")),
    ("pagie1-pimp-subtree", include_str!("../../../configs/run/pagie1-pimp-subtree.toml")),
    ("pagie1-tournament-subtree", include_str!("../../../configs/run/pagie1-tournament-subtree.toml")),
];

/// Experiment presets: name and TOML text.
pub const BATCH_PRESETS: &[(&str, &str)] = &[
    ("diabetes-comparison", include_str!("../../../configs/batch/diabetes-comparison.toml")),
    ("hybrid-staged", include_str!("../../../configs/batch/hybrid-staged.toml")),
    ("mutation-study", include_str!("../../../configs/batch/mutation-study.toml")),
    ("preference-collapse", include_str!("../../../configs/batch/preference-collapse.toml")),
    ("subtree-comparison", include_str!("../../../configs/batch/subtree-comparison.toml")),
];

pub fn run_preset(name: &str) -> Result<&'static str, CliError> {
    lookup(RUN_PRESETS, name, "run")
}

pub fn batch_preset(name: &str) -> Result<&'static str, CliError> {
    lookup(BATCH_PRESETS, name, "batch")
}

fn lookup(table: &[(&str, &'static str)], name: &str, kind: &str) -> Result<&'static str, CliError> {
    table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        CliError::validation(format!("unknown {kind} preset `{name}` (available: {})", names.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentFile, Overrides, RunFile};
    use pimp_gp::MutationStrategy;

    #[test]
    fn every_preset_resolves() {
        for (name, text) in RUN_PRESETS {
            RunFile::parse(text).and_then(|f| f.resolve(&Overrides::default())).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        for (name, text) in BATCH_PRESETS {
            ExperimentFile::parse(text)
                .and_then(|f| f.resolve(&Overrides::default()))
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn hybrid_preset_spells_out_the_staged_schedule() {
        let cfg = RunFile::parse(run_preset("hybrid-staged").unwrap()).unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.mutation, MutationStrategy::staged_hybrid(1500));
        assert_eq!(cfg.mutation.switch_points(), vec![200, 400, 600]);
    }

    #[test]
    fn diabetes_preset_runs_500_generations() {
        let cfg = RunFile::parse(run_preset("diabetes-500gen").unwrap()).unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.generations, 500);
    }

    #[test]
    fn unknown_preset_lists_names() {
        let msg = run_preset("nope").unwrap_err().to_string();
        assert!(msg.contains("koza1-pimp-subtree"), "{msg}");
    }
}
