//! Rule-based reports and pathology labels derived from graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::eval::LabelVector;
use crate::graph::{EntityClassSpace, GraphError, RadiologyGraph, RelationType, Uncertainty};

/// One template per uncertainty level of the sentence's head entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyTemplates {
    pub definitely_present: String,
    pub uncertain: String,
    pub definitely_absent: String,
}

impl UncertaintyTemplates {
    fn new(present: &str, uncertain: &str, absent: &str) -> Self {
        Self {
            definitely_present: present.into(),
            uncertain: uncertain.into(),
            definitely_absent: absent.into(),
        }
    }

    pub fn get(&self, u: Uncertainty) -> &str {
        match u {
            Uncertainty::DefinitelyPresent => &self.definitely_present,
            Uncertainty::Uncertain => &self.uncertain,
            Uncertainty::DefinitelyAbsent => &self.definitely_absent,
        }
    }
}

/// How `modify` relations surface in the report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModifierPolicy {
    /// The modifier's name is prefixed onto its target's phrase.
    #[default]
    Fold,
    /// Each `modify` relation gets its own sentence.
    Sentence,
}

/// Sentence templates.
///
/// Relation templates use `{head}` and `{tail}`, isolated templates use
/// `{entity}`. Entities with folded modifiers expand through
/// `noun_phrase`, or `location_phrase` when they are a `located_at` tail;
/// both take `{modifiers}` and `{name}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRules {
    pub modify: UncertaintyTemplates,
    pub located_at: UncertaintyTemplates,
    pub suggestive_of: UncertaintyTemplates,
    pub isolated: UncertaintyTemplates,
    pub noun_phrase: String,
    pub location_phrase: String,
    #[serde(default)]
    pub modifier_policy: ModifierPolicy,
}

impl Default for ReportRules {
    fn default() -> Self {
        Self {
            modify: UncertaintyTemplates::new(
                "{head} modifies {tail}.",
                "{head} possibly modifies {tail}.",
                "{head} does not modify {tail}.",
            ),
            located_at: UncertaintyTemplates::new(
                "There is {head} located at {tail}.",
                "There is possibly {head} located at {tail}.",
                "There is no {head} located at {tail}.",
            ),
            suggestive_of: UncertaintyTemplates::new(
                "{head} is suggestive of {tail}.",
                "{head} is possibly suggestive of {tail}.",
                "{head} is not suggestive of {tail}.",
            ),
            isolated: UncertaintyTemplates::new("There is {entity}.", "There is possibly {entity}.", "There is no {entity}."),
            noun_phrase: "{modifiers} {name}".into(),
            location_phrase: "{modifiers} of {name}".into(),
            modifier_policy: ModifierPolicy::Fold,
        }
    }
}

impl ReportRules {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }

    fn relation_templates(&self, kind: RelationType) -> &UncertaintyTemplates {
        match kind {
            RelationType::Modify => &self.modify,
            RelationType::LocatedAt => &self.located_at,
            RelationType::SuggestiveOf => &self.suggestive_of,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Renders `graph` as sentences ordered by head entity id, joined by one
/// space. Entities outside every sentence get an isolated sentence of
/// their own, unless folded into a rendered target.
pub fn graph_to_report(graph: &RadiologyGraph, classes: &EntityClassSpace, rules: &ReportRules) -> String {
    let n = graph.entities().len();
    let fold = rules.modifier_policy == ModifierPolicy::Fold;
    let mut modifiers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut in_sentence = vec![false; n];
    for r in graph.relations() {
        if r.kind == RelationType::Modify && fold {
            modifiers[r.tail].push(r.head);
            targets[r.head].push(r.tail);
        } else {
            in_sentence[r.head] = true;
            in_sentence[r.tail] = true;
        }
    }
    // A folded modifier only shows up through a rendered target; modifiers
    // of modifiers and modify cycles get their own sentence, lowest id first.
    let mut rendered: Vec<bool> = (0..n).map(|i| in_sentence[i] || targets[i].is_empty()).collect();
    while let Some(i) = (0..n).find(|&i| !rendered[i] && !targets[i].iter().any(|&t| rendered[t])) {
        rendered[i] = true;
    }
    let name = |id: usize| classes.name(graph.entity(id).class_id);
    let phrase = |id: usize, template: &str| {
        if modifiers[id].is_empty() {
            name(id).to_string()
        } else {
            let mods: Vec<&str> = modifiers[id].iter().map(|&m| name(m)).collect();
            template.replace("{modifiers}", &mods.join(" ")).replace("{name}", name(id))
        }
    };

    let mut by_head: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for r in graph.relations() {
        if r.kind == RelationType::Modify && fold {
            continue;
        }
        let tail_template = if r.kind == RelationType::LocatedAt {
            &rules.location_phrase
        } else {
            &rules.noun_phrase
        };
        let template = rules.relation_templates(r.kind).get(graph.entity(r.head).uncertainty);
        let sentence = template
            .replace("{head}", &phrase(r.head, &rules.noun_phrase))
            .replace("{tail}", &phrase(r.tail, tail_template));
        by_head.entry(r.head).or_default().push(sentence);
    }
    for id in (0..n).filter(|&i| rendered[i] && !in_sentence[i]) {
        let template = rules.isolated.get(graph.entity(id).uncertainty);
        by_head
            .entry(id)
            .or_default()
            .push(template.replace("{entity}", &phrase(id, &rules.noun_phrase)));
    }
    by_head
        .into_values()
        .flatten()
        .map(|s| capitalize(&s))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Class name pattern: exact, or a prefix followed by a trailing `*`.
fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    /// Entity class patterns that can fire the label.
    pub classes: Vec<String>,
    /// When non-empty, the entity must be `located_at` one of these.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub located_at: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub label: String,
    pub triggers: Vec<Trigger>,
}

/// Pathology labels with their triggers, validated against a class space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathologyMapping {
    pub labels: Vec<LabelRule>,
}

impl PathologyMapping {
    /// Rejects duplicate labels and patterns matching no class.
    pub fn new(labels: Vec<LabelRule>, classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        for rule in &labels {
            if !seen.insert(rule.label.as_str()) {
                return Err(GraphError::InvalidMapping(format!("duplicate label {:?}", rule.label)));
            }
            for t in &rule.triggers {
                if t.classes.is_empty() {
                    return Err(GraphError::InvalidMapping(format!("label {:?} has a trigger without classes", rule.label)));
                }
                for p in t.classes.iter().chain(&t.located_at) {
                    if !classes.names().iter().any(|n| pattern_matches(p, n)) {
                        return Err(GraphError::InvalidMapping(format!(
                            "label {:?}: pattern {p:?} matches no class",
                            rule.label
                        )));
                    }
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn from_json(text: &str, classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let raw: PathologyMapping = serde_json::from_str(text)?;
        Self::new(raw.labels, classes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    /// Atelectasis, Edema, Pleural Effusion and Lung Opacity over the
    /// radiology sample classes.
    pub fn radiology_default(classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let rule = |label: &str, cls: &[&str], loc: &[&str]| LabelRule {
            label: label.into(),
            triggers: vec![Trigger {
                classes: cls.iter().map(|s| s.to_string()).collect(),
                located_at: loc.iter().map(|s| s.to_string()).collect(),
            }],
        };
        Self::new(
            vec![
                rule("Atelectasis", &["atelectasis"], &[]),
                rule("Edema", &["edema"], &[]),
                rule("Pleural Effusion", &["effusion"], &["pleural"]),
                rule("Lung Opacity", &["opacit*", "consolidation"], &[]),
            ],
            classes,
        )
    }

    /// One label per pathology analogue of the synthetic ontology.
    pub fn synth_default(classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let rule = |label: &str, cls: &str| LabelRule {
            label: label.into(),
            triggers: vec![Trigger {
                classes: vec![cls.into()],
                located_at: vec![],
            }],
        };
        Self::new(
            vec![
                rule("Atelectasis", "atelectasis"),
                rule("Effusion", "effusion"),
                rule("Nodule", "nodule"),
                rule("Opacity", "opacity"),
            ],
            classes,
        )
    }
}

/// A label is positive iff a definitely-present trigger entity exists,
/// `located_at` a matching anatomy when the trigger asks for one.
pub fn graph_to_labels(graph: &RadiologyGraph, classes: &EntityClassSpace, mapping: &PathologyMapping) -> LabelVector {
    let class_of = |id: usize| classes.name(graph.entity(id).class_id);
    let fires = |t: &Trigger| {
        graph.entities().iter().any(|e| {
            e.uncertainty == Uncertainty::DefinitelyPresent
                && t.classes.iter().any(|p| pattern_matches(p, classes.name(e.class_id)))
                && (t.located_at.is_empty()
                    || graph.relations().iter().any(|r| {
                        r.head == e.id
                            && r.kind == RelationType::LocatedAt
                            && t.located_at.iter().any(|p| pattern_matches(p, class_of(r.tail)))
                    }))
        })
    };
    LabelVector(
        mapping
            .labels
            .iter()
            .map(|rule| (rule.label.clone(), rule.triggers.iter().any(fires)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{radiology_sample_classes, Relation};

    fn build(classes: &EntityClassSpace, nodes: &[(&str, Uncertainty)], rels: &[(usize, usize, RelationType)]) -> RadiologyGraph {
        let nodes: Vec<(usize, Uncertainty)> = nodes.iter().map(|&(n, u)| (classes.id(n).unwrap(), u)).collect();
        let rels = rels.iter().map(|&(h, t, k)| Relation::new(h, t, k)).collect();
        RadiologyGraph::new(&nodes, rels, classes.len()).unwrap()
    }

    const DP: Uncertainty = Uncertainty::DefinitelyPresent;

    fn exemplar(classes: &EntityClassSpace, effusion: Uncertainty) -> RadiologyGraph {
        build(
            classes,
            &[("effusion", effusion), ("enlarged", DP), ("pleural", DP), ("bilateral", DP)],
            &[
                (1, 0, RelationType::Modify),
                (3, 2, RelationType::Modify),
                (0, 2, RelationType::LocatedAt),
            ],
        )
    }

    #[test]
    fn exemplar_sentence() {
        let c = radiology_sample_classes();
        let report = graph_to_report(&exemplar(&c, DP), &c, &ReportRules::default());
        assert_eq!(report, "There is enlarged effusion located at bilateral of pleural.");
    }

    #[test]
    fn empty_and_isolated() {
        let c = radiology_sample_classes();
        assert_eq!(graph_to_report(&RadiologyGraph::empty(), &c, &ReportRules::default()), "");
        let g = build(&c, &[("atelectasis", Uncertainty::DefinitelyAbsent)], &[]);
        assert_eq!(graph_to_report(&g, &c, &ReportRules::default()), "There is no atelectasis.");
        let g = build(&c, &[("edema", Uncertainty::Uncertain)], &[]);
        assert_eq!(graph_to_report(&g, &c, &ReportRules::default()), "There is possibly edema.");
    }

    #[test]
    fn suggestive_and_sentence_policy() {
        let c = radiology_sample_classes();
        let g = build(
            &c,
            &[("opacity", DP), ("pneumonic", DP), ("increased", DP)],
            &[(0, 1, RelationType::SuggestiveOf), (2, 0, RelationType::Modify)],
        );
        assert_eq!(
            graph_to_report(&g, &c, &ReportRules::default()),
            "Increased opacity is suggestive of pneumonic."
        );
        let rules = ReportRules {
            modifier_policy: ModifierPolicy::Sentence,
            ..ReportRules::default()
        };
        assert_eq!(
            graph_to_report(&g, &c, &rules),
            "Opacity is suggestive of pneumonic. Increased modifies opacity."
        );
    }

    #[test]
    fn labels_follow_trigger_rules() {
        let c = radiology_sample_classes();
        let m = PathologyMapping::radiology_default(&c).unwrap();
        let labels = graph_to_labels(&exemplar(&c, DP), &c, &m);
        assert_eq!(labels.get("Pleural Effusion"), Some(true));
        assert_eq!(labels.get("Edema"), Some(false));
        let uncertain = graph_to_labels(&exemplar(&c, Uncertainty::Uncertain), &c, &m);
        assert_eq!(uncertain.get("Pleural Effusion"), Some(false));
        let empty = graph_to_labels(&RadiologyGraph::empty(), &c, &m);
        assert!(empty.0.values().all(|v| !v));
        assert_eq!(empty.0.len(), 4);
        // effusion without a pleural location does not fire
        let bare = build(&c, &[("effusion", DP)], &[]);
        assert_eq!(graph_to_labels(&bare, &c, &m).get("Pleural Effusion"), Some(false));
        // glob pattern
        let opac = build(&c, &[("opacities", DP)], &[]);
        assert_eq!(graph_to_labels(&opac, &c, &m).get("Lung Opacity"), Some(true));
    }

    #[test]
    fn mapping_rejects_unknown_classes() {
        let c = radiology_sample_classes();
        let text = r#"{"labels":[{"label":"X","triggers":[{"classes":["nothing*"]}]}]}"#;
        assert!(matches!(PathologyMapping::from_json(text, &c), Err(GraphError::InvalidMapping(_))));
    }

    #[test]
    fn rules_round_trip_json() {
        let r = ReportRules::default();
        assert_eq!(ReportRules::from_json(&r.to_json()).unwrap(), r);
    }
}
