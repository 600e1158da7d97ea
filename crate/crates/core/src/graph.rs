//! Radiology graph data model and its JSON interchange format.
//!
//! A [`RadiologyGraph`] holds entities (a class from an
//! [`EntityClassSpace`] plus an [`Uncertainty`] level) and typed directed
//! [`Relation`]s between them. Graphs are validated on construction and
//! keep their relations sorted by `(head, tail, type)`, so equal graphs
//! serialize to identical bytes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unknown entity class {0:?}")]
    UnknownClass(String),
    #[error("unknown uncertainty level {0:?}")]
    UnknownUncertainty(String),
    #[error("unknown relation type {0:?}")]
    UnknownRelationType(String),
    #[error("class id {class_id} out of range for {count} classes")]
    ClassOutOfRange { class_id: usize, count: usize },
    #[error("duplicate entity id {0}")]
    DuplicateEntityId(usize),
    #[error("entity ids must be 0..{count}, found {id}")]
    NonContiguousIds { id: usize, count: usize },
    #[error("relation {head}->{tail} references a missing entity")]
    DanglingRelation { head: usize, tail: usize },
    #[error("self-loop relation on entity {0}")]
    SelfLoop(usize),
    #[error("duplicate relation {head}-{kind}->{tail}")]
    DuplicateRelation {
        head: usize,
        tail: usize,
        kind: RelationType,
    },
    #[error("invalid class space: {0}")]
    InvalidClassSpace(String),
    #[error("invalid surface mapping: {0}")]
    InvalidMapping(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<serde_json::Error> for GraphError {
    fn from(e: serde_json::Error) -> Self {
        GraphError::Json(e.to_string())
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, GraphError> {
    std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Ordered list of canonical entity class names.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityClassSpace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl EntityClassSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, GraphError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(GraphError::InvalidClassSpace("no classes".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(GraphError::InvalidClassSpace(format!("class {i} has an empty name")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(GraphError::InvalidClassSpace(format!("duplicate class {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// Parses a JSON array of class names.
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let names: Vec<String> = serde_json::from_str(text)?;
        Self::new(names)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.names).expect("names serialize")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $err:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn parse(s: &str) -> Result<Self, GraphError> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(GraphError::$err(other.to_string())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = std::borrow::Cow::<'de, str>::deserialize(d)?;
                Self::parse(&text).map_err(serde::de::Error::custom)
            }
        }
    };
}

string_enum!(
    /// Presence/uncertainty level attached to every entity.
    Uncertainty, UnknownUncertainty {
        DefinitelyPresent => "definitely_present",
        Uncertain => "uncertain",
        DefinitelyAbsent => "definitely_absent",
    }
);

string_enum!(
    /// The three foreground relation types.
    RelationType, UnknownRelationType {
        Modify => "modify",
        LocatedAt => "located_at",
        SuggestiveOf => "suggestive_of",
    }
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Entity {
    pub id: usize,
    pub class_id: usize,
    pub uncertainty: Uncertainty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation {
    pub head: usize,
    pub tail: usize,
    pub kind: RelationType,
}

impl Relation {
    pub fn new(head: usize, tail: usize, kind: RelationType) -> Self {
        Self { head, tail, kind }
    }

    fn sort_key(&self) -> (usize, usize, RelationType) {
        (self.head, self.tail, self.kind)
    }
}

/// A validated radiology graph.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RadiologyGraph {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
}

impl RadiologyGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a graph from `(class_id, uncertainty)` pairs (ids assigned in
    /// order) and relations, checking every invariant.
    pub fn new(
        entities: &[(usize, Uncertainty)],
        relations: Vec<Relation>,
        class_count: usize,
    ) -> Result<Self, GraphError> {
        let entities: Vec<Entity> = entities
            .iter()
            .enumerate()
            .map(|(id, &(class_id, uncertainty))| Entity {
                id,
                class_id,
                uncertainty,
            })
            .collect();
        Self::from_parts(entities, relations, class_count)
    }

    fn from_parts(
        entities: Vec<Entity>,
        mut relations: Vec<Relation>,
        class_count: usize,
    ) -> Result<Self, GraphError> {
        for (i, e) in entities.iter().enumerate() {
            debug_assert_eq!(e.id, i);
            if e.class_id >= class_count {
                return Err(GraphError::ClassOutOfRange {
                    class_id: e.class_id,
                    count: class_count,
                });
            }
        }
        let n = entities.len();
        let mut seen = HashSet::with_capacity(relations.len());
        for r in &relations {
            if r.head >= n || r.tail >= n {
                return Err(GraphError::DanglingRelation {
                    head: r.head,
                    tail: r.tail,
                });
            }
            if r.head == r.tail {
                return Err(GraphError::SelfLoop(r.head));
            }
            if !seen.insert(*r) {
                return Err(GraphError::DuplicateRelation {
                    head: r.head,
                    tail: r.tail,
                    kind: r.kind,
                });
            }
        }
        relations.sort_by_key(Relation::sort_key);
        Ok(Self {
            entities,
            relations,
        })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn entity(&self, id: usize) -> &Entity {
        &self.entities[id]
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Parses the interchange JSON against `classes`.
    pub fn from_json(text: &str, classes: &EntityClassSpace) -> Result<Self, GraphError> {
        parse_graph_json(text, classes)
    }

    pub fn to_json(&self, classes: &EntityClassSpace) -> String {
        serialize_graph(self, classes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord<'a> {
    id: usize,
    #[serde(borrow)]
    class: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    uncertainty: std::borrow::Cow<'a, str>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationRecord<'a> {
    head: usize,
    tail: usize,
    #[serde(rename = "type", borrow)]
    kind: std::borrow::Cow<'a, str>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord<'a> {
    #[serde(borrow)]
    entities: Vec<EntityRecord<'a>>,
    #[serde(borrow)]
    relations: Vec<RelationRecord<'a>>,
}

/// Parses and validates a graph document.
pub fn parse_graph_json(text: &str, classes: &EntityClassSpace) -> Result<RadiologyGraph, GraphError> {
    let record: GraphRecord = serde_json::from_str(text)?;
    let n = record.entities.len();
    let mut slots: Vec<Option<Entity>> = vec![None; n];
    for e in &record.entities {
        if e.id >= n {
            return Err(GraphError::NonContiguousIds { id: e.id, count: n });
        }
        if slots[e.id].is_some() {
            return Err(GraphError::DuplicateEntityId(e.id));
        }
        let class_id = classes
            .id(&e.class)
            .ok_or_else(|| GraphError::UnknownClass(e.class.to_string()))?;
        slots[e.id] = Some(Entity {
            id: e.id,
            class_id,
            uncertainty: Uncertainty::parse(&e.uncertainty)?,
        });
    }
    // Every slot is filled: n distinct ids below n.
    let entities = slots.into_iter().map(Option::unwrap).collect();
    let relations = record
        .relations
        .iter()
        .map(|r| Ok(Relation::new(r.head, r.tail, RelationType::parse(&r.kind)?)))
        .collect::<Result<Vec<_>, GraphError>>()?;
    RadiologyGraph::from_parts(entities, relations, classes.len())
}

/// Compact deterministic JSON: entities by id, relations by `(head, tail, type)`.
pub fn serialize_graph(graph: &RadiologyGraph, classes: &EntityClassSpace) -> String {
    let record = GraphRecord {
        entities: graph
            .entities
            .iter()
            .map(|e| EntityRecord {
                id: e.id,
                class: classes.name(e.class_id).into(),
                uncertainty: e.uncertainty.as_str().into(),
            })
            .collect(),
        relations: graph
            .relations
            .iter()
            .map(|r| RelationRecord {
                head: r.head,
                tail: r.tail,
                kind: r.kind.as_str().into(),
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("graph serializes")
}

/// Lowercased surface form -> canonical class name.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMapping {
    map: HashMap<String, String>,
}

impl SurfaceMapping {
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        classes: &EntityClassSpace,
    ) -> Result<Self, GraphError> {
        let mut map = HashMap::new();
        for (surface, canonical) in pairs {
            if classes.id(&canonical).is_none() {
                return Err(GraphError::InvalidMapping(format!(
                    "{surface:?} maps to unknown class {canonical:?}"
                )));
            }
            map.insert(surface.to_lowercase(), canonical);
        }
        Ok(Self { map })
    }

    /// Parses a JSON object of `surface -> canonical`.
    pub fn from_json(text: &str, classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let raw: HashMap<String, String> = serde_json::from_str(text)?;
        Self::new(raw, classes)
    }

    /// Sample mappings for the radiology class space (surface variants
    /// observed in reports for ten canonical classes).
    pub fn radiology_sample(classes: &EntityClassSpace) -> Result<Self, GraphError> {
        let pairs = RADIOLOGY_SURFACE_FORMS.iter().flat_map(|(canon, forms)| {
            forms
                .iter()
                .map(move |f| (f.to_string(), canon.to_string()))
        });
        Self::new(pairs, classes)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// JSON object of `surface -> canonical`, keys sorted.
    pub fn to_json(&self) -> String {
        let sorted: std::collections::BTreeMap<&String, &String> = self.map.iter().collect();
        serde_json::to_string_pretty(&sorted).expect("mapping serializes")
    }

    pub fn normalize(&self, surface: &str) -> Option<&str> {
        self.map.get(&surface.to_lowercase()).map(String::as_str)
    }
}

/// Case-insensitive lookup of a surface form; `None` when unmapped.
pub fn normalize_entity_surface<'m>(surface: &str, mapping: &'m SurfaceMapping) -> Option<&'m str> {
    mapping.normalize(surface)
}

const RADIOLOGY_SURFACE_FORMS: &[(&str, &[&str])] = &[
    ("clear", &["clear", "lucencies", "lucency"]),
    ("consolidation", &["consolidation", "consolidations", "consolidative"]),
    ("congested", &["congested", "congestion", "engorged"]),
    ("sharp", &["sharp", "sharply"]),
    ("prominent", &["prominent", "prominence"]),
    ("nodule", &["nodule", "nodules", "nodular"]),
    ("pneumonic", &["pneumonic", "pneumonia"]),
    ("calcification", &["calcification", "calcified", "calcifications"]),
    ("tortuous", &["tortuous", "tortuosity"]),
    ("atelectasis", &["atelectasis", "atelectatic", "atelectases"]),
];

/// A small radiology vocabulary covering the sample surface mappings and
/// the entities used by the default report rules and pathology mapping.
pub const RADIOLOGY_SAMPLE_CLASSES: &[&str] = &[
    "clear",
    "consolidation",
    "congested",
    "sharp",
    "prominent",
    "nodule",
    "pneumonic",
    "calcification",
    "tortuous",
    "atelectasis",
    "effusion",
    "pleural",
    "enlarged",
    "bilateral",
    "left",
    "right",
    "lung",
    "lobe",
    "heart",
    "cardiac",
    "silhouette",
    "edema",
    "pulmonary",
    "opacity",
    "opacities",
    "base",
    "normal",
    "size",
    "small",
    "moderate",
    "layering",
    "increased",
];

pub fn radiology_sample_classes() -> EntityClassSpace {
    EntityClassSpace::new(RADIOLOGY_SAMPLE_CLASSES.iter().copied()).expect("sample classes are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> EntityClassSpace {
        EntityClassSpace::new(["atelectasis", "effusion", "pleural"]).unwrap()
    }

    #[test]
    fn table_surface_forms_normalize() {
        let cs = radiology_sample_classes();
        let m = SurfaceMapping::radiology_sample(&cs).unwrap();
        assert_eq!(normalize_entity_surface("lucencies", &m), Some("clear"));
        assert_eq!(normalize_entity_surface("atelectatic", &m), Some("atelectasis"));
        assert_eq!(normalize_entity_surface("Atelectases", &m), Some("atelectasis"));
        assert_eq!(normalize_entity_surface("zzz-unknown", &m), None);
        // canonical names map to themselves, so normalization is idempotent
        for surface in ["lucency", "engorged", "nodular", "calcified"] {
            let once = m.normalize(surface).unwrap();
            assert_eq!(m.normalize(once), Some(once));
        }
    }

    #[test]
    fn mapping_rejects_unknown_target() {
        let err = SurfaceMapping::from_json(r#"{"foo":"nonexistent"}"#, &classes()).unwrap_err();
        assert!(matches!(err, GraphError::InvalidMapping(_)));
    }

    #[test]
    fn empty_graph_round_trip() {
        let g = parse_graph_json(r#"{"entities":[],"relations":[]}"#, &classes()).unwrap();
        assert!(g.is_empty());
        assert_eq!(serialize_graph(&g, &classes()), r#"{"entities":[],"relations":[]}"#);
    }

    #[test]
    fn two_entity_document() {
        let text = r#"{"entities":[{"id":1,"class":"pleural","uncertainty":"definitely_present"},
            {"id":0,"class":"effusion","uncertainty":"uncertain"}],
            "relations":[{"head":0,"tail":1,"type":"located_at"}]}"#;
        let g = parse_graph_json(text, &classes()).unwrap();
        assert_eq!(g.entities().len(), 2);
        assert_eq!(g.relations().len(), 1);
        assert_eq!(g.entity(0).class_id, 1);
        let out = serialize_graph(&g, &classes());
        assert_eq!(parse_graph_json(&out, &classes()).unwrap(), g);
    }

    #[test]
    fn class_space_rejects_duplicates_and_empty() {
        assert!(EntityClassSpace::new(["a", "a"]).is_err());
        assert!(EntityClassSpace::new([""]).is_err());
        assert!(EntityClassSpace::new(Vec::<String>::new()).is_err());
        let cs = EntityClassSpace::from_json(r#"["x","y"]"#).unwrap();
        assert_eq!(cs.id("y"), Some(1));
        assert_eq!(EntityClassSpace::from_json(&cs.to_json()).unwrap(), cs);
    }

    fn parse_err(text: &str) -> GraphError {
        parse_graph_json(text, &classes()).unwrap_err()
    }

    #[test]
    fn every_invariant_has_a_distinct_error() {
        let e = r#"{"id":0,"class":"effusion","uncertainty":"definitely_present"},{"id":1,"class":"pleural","uncertainty":"definitely_present"}"#;
        let cases = [
            (r#"{"entities":[}"#.to_string(), "json"),
            (
                r#"{"entities":[{"id":0,"class":"bogus","uncertainty":"uncertain"}],"relations":[]}"#.into(),
                "class",
            ),
            (
                r#"{"entities":[{"id":0,"class":"pleural","uncertainty":"maybe"}],"relations":[]}"#.into(),
                "uncertainty",
            ),
            (format!(r#"{{"entities":[{e}],"relations":[{{"head":0,"tail":1,"type":"causes"}}]}}"#), "type"),
            (format!(r#"{{"entities":[{e}],"relations":[{{"head":0,"tail":5,"type":"modify"}}]}}"#), "dangling"),
            (format!(r#"{{"entities":[{e}],"relations":[{{"head":1,"tail":1,"type":"modify"}}]}}"#), "self-loop"),
            (
                format!(r#"{{"entities":[{e}],"relations":[{{"head":0,"tail":1,"type":"modify"}},{{"head":0,"tail":1,"type":"modify"}}]}}"#),
                "duplicate relation",
            ),
            (
                r#"{"entities":[{"id":0,"class":"pleural","uncertainty":"uncertain"},{"id":0,"class":"pleural","uncertainty":"uncertain"}],"relations":[]}"#.into(),
                "duplicate id",
            ),
            (
                r#"{"entities":[{"id":3,"class":"pleural","uncertainty":"uncertain"}],"relations":[]}"#.into(),
                "gap",
            ),
        ];
        let mut kinds = HashSet::new();
        for (text, label) in &cases {
            let err = parse_err(text);
            kinds.insert(std::mem::discriminant(&err));
            if *label == "self-loop" {
                assert!(err.to_string().contains("self-loop"), "{err}");
            }
        }
        assert_eq!(kinds.len(), cases.len());
    }

    #[test]
    fn relations_are_sorted_on_construction() {
        let g = RadiologyGraph::new(
            &[
                (0, Uncertainty::DefinitelyPresent),
                (1, Uncertainty::Uncertain),
                (2, Uncertainty::DefinitelyAbsent),
            ],
            vec![
                Relation::new(2, 0, RelationType::Modify),
                Relation::new(0, 1, RelationType::SuggestiveOf),
                Relation::new(0, 1, RelationType::Modify),
            ],
            3,
        )
        .unwrap();
        let keys: Vec<_> = g.relations().iter().map(|r| (r.head, r.tail, r.kind)).collect();
        assert_eq!(
            keys,
            vec![
                (0, 1, RelationType::Modify),
                (0, 1, RelationType::SuggestiveOf),
                (2, 0, RelationType::Modify)
            ]
        );
    }
}
