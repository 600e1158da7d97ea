use std::fs;
use std::path::{Path, PathBuf};

use radgraph::downstream::{PathologyMapping, ReportRules};
use radgraph::graph::{radiology_sample_classes, EntityClassSpace, SurfaceMapping};
use radgraph::synth::synth_ontology;
use radgraph_cli::RunConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read(name: &str) -> String {
    fs::read_to_string(configs().join(name)).unwrap()
}

#[test]
fn default_run_config_matches_code_defaults() {
    let shipped = RunConfig::parse(&read("default.json"), &[]).unwrap();
    let defaults = RunConfig::default();
    assert_eq!(shipped.model, defaults.model);
    assert_eq!(shipped.train, defaults.train);
    assert!(shipped.paths.dataset.is_some() && shipped.paths.output.is_some());
}

#[test]
fn downstream_files_match_code_defaults() {
    assert_eq!(ReportRules::from_json(&read("report_rules.json")).unwrap(), ReportRules::default());
    let rc = EntityClassSpace::from_json(&read("radiology_classes.json")).unwrap();
    assert_eq!(rc, radiology_sample_classes());
    assert_eq!(
        PathologyMapping::from_json(&read("pathology_radiology.json"), &rc).unwrap(),
        PathologyMapping::radiology_default(&rc).unwrap()
    );
    let sc = synth_ontology();
    assert_eq!(
        PathologyMapping::from_json(&read("pathology_synth.json"), &sc).unwrap(),
        PathologyMapping::synth_default(&sc).unwrap()
    );
    assert_eq!(
        SurfaceMapping::from_json(&read("surface_forms.json"), &rc).unwrap(),
        SurfaceMapping::radiology_sample(&rc).unwrap()
    );
}
