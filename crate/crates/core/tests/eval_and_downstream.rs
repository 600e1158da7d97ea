use proptest::prelude::*;
use radgraph::downstream::{graph_to_labels, graph_to_report, ModifierPolicy, PathologyMapping, ReportRules};
use radgraph::eval::{
    bleu1, chexpert_label_f1, entity_micro_prf, relation_micro_prf, relation_micro_prf_with, rouge_l, tokenize,
    LabelVector, Prf,
};
use radgraph::graph::{radiology_sample_classes, EntityClassSpace, RadiologyGraph, Relation, RelationType, Uncertainty};

const DP: Uncertainty = Uncertainty::DefinitelyPresent;
const UN: Uncertainty = Uncertainty::Uncertain;

fn classes() -> EntityClassSpace {
    radiology_sample_classes()
}

fn id(name: &str) -> usize {
    classes().id(name).unwrap()
}

fn graph(nodes: &[(&str, Uncertainty)], rels: &[(usize, RelationType, usize)]) -> RadiologyGraph {
    let nodes: Vec<_> = nodes.iter().map(|&(n, u)| (id(n), u)).collect();
    let rels = rels.iter().map(|&(h, k, t)| Relation::new(h, t, k)).collect();
    RadiologyGraph::new(&nodes, rels, classes().len()).unwrap()
}

fn counts(p: &Prf) -> (usize, usize, usize) {
    (p.tp, p.fp, p.fn_)
}

fn eff_at_pleural(head: Uncertainty) -> RadiologyGraph {
    graph(&[("effusion", head), ("pleural", DP)], &[(0, RelationType::LocatedAt, 1)])
}

#[test]
fn worked_examples() {
    // entity hand count
    let p = entity_micro_prf(
        &[graph(&[("atelectasis", DP), ("effusion", DP)], &[])],
        &[graph(&[("atelectasis", DP)], &[])],
    )
    .unwrap();
    assert_eq!(counts(&p), (1, 1, 0));
    assert_eq!((p.precision, p.recall), (0.5, 1.0));
    assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);

    // empty prediction
    let p = entity_micro_prf(&[RadiologyGraph::empty()], &[graph(&[("edema", DP)], &[])]).unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));

    // empty corpus on both sides
    let p = entity_micro_prf(&[RadiologyGraph::empty()], &[RadiologyGraph::empty()]).unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));

    // identical relation
    let p = relation_micro_prf(&[eff_at_pleural(DP)], &[eff_at_pleural(DP)]).unwrap();
    assert_eq!(p.f1, 1.0);

    // head uncertainty differs
    let p = relation_micro_prf(&[eff_at_pleural(UN)], &[eff_at_pleural(DP)]).unwrap();
    assert_eq!(p.tp, 0);
    let p = relation_micro_prf_with(&[eff_at_pleural(UN)], &[eff_at_pleural(DP)], true).unwrap();
    assert_eq!(p.tp, 1);

    // duplicated triple in the prediction
    let dup = graph(
        &[("effusion", DP), ("pleural", DP), ("effusion", DP), ("pleural", DP)],
        &[(0, RelationType::LocatedAt, 1), (2, RelationType::LocatedAt, 3)],
    );
    let p = relation_micro_prf(&[dup], &[eff_at_pleural(DP)]).unwrap();
    assert_eq!(counts(&p), (1, 1, 0));
}

#[test]
fn text_metric_examples() {
    assert_eq!(bleu1("the cat sat", "the cat sat"), 1.0);
    assert!((bleu1("the cat", "the cat sat") - (-0.5f64).exp()).abs() < 1e-12);
    assert_eq!(bleu1("dog", "the cat"), 0.0);
    assert_eq!(bleu1("", "the cat"), 0.0);
    assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
    assert!((rouge_l("the cat sat", "the cat") - 0.8).abs() < 1e-12);
    assert_eq!(rouge_l("dog", "the cat"), 0.0);
    assert_eq!(rouge_l("", ""), 0.0);
}

fn labels(pairs: &[(&str, bool)]) -> LabelVector {
    LabelVector(pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect())
}

#[test]
fn label_f1_examples() {
    let pred = [true, true, false].map(|v| labels(&[("PE", v)]));
    let gt = [true, false, false].map(|v| labels(&[("PE", v)]));
    let s = chexpert_label_f1(&pred, &gt).unwrap()["PE"];
    assert_eq!(counts(&s.prf), (1, 1, 0));
    assert!((s.prf.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(!s.undefined);

    let pred = [false, false].map(|v| labels(&[("At", v)]));
    let gt = [true, false].map(|v| labels(&[("At", v)]));
    let s = chexpert_label_f1(&pred, &gt).unwrap()["At"];
    assert_eq!(s.prf.f1, 0.0);
    assert!(s.undefined);

    let all = [true, false].map(|v| labels(&[("At", v), ("Ed", !v)]));
    let scores = chexpert_label_f1(&all, &all).unwrap();
    assert!(scores.values().all(|s| s.prf.f1 == 1.0));
}

#[test]
fn exemplar_report_and_label() {
    let g = graph(
        &[("effusion", DP), ("enlarged", DP), ("pleural", DP), ("bilateral", DP)],
        &[
            (1, RelationType::Modify, 0),
            (3, RelationType::Modify, 2),
            (0, RelationType::LocatedAt, 2),
        ],
    );
    let c = classes();
    assert_eq!(
        graph_to_report(&g, &c, &ReportRules::default()),
        "There is enlarged effusion located at bilateral of pleural."
    );
    let mapping = PathologyMapping::radiology_default(&c).unwrap();
    let l = graph_to_labels(&g, &c, &mapping);
    assert_eq!(l.get("Pleural Effusion"), Some(true));
    assert_eq!(l.get("Edema"), Some(false));

    assert_eq!(graph_to_report(&RadiologyGraph::empty(), &c, &ReportRules::default()), "");
    let absent = graph(&[("atelectasis", Uncertainty::DefinitelyAbsent)], &[]);
    assert_eq!(graph_to_report(&absent, &c, &ReportRules::default()), "There is no atelectasis.");
    assert!(graph_to_labels(&RadiologyGraph::empty(), &c, &mapping).0.values().all(|v| !v));
    assert_eq!(graph_to_labels(&eff_at_pleural(UN), &c, &mapping).get("Pleural Effusion"), Some(false));
}

fn arb_graph() -> impl Strategy<Value = RadiologyGraph> {
    let c = classes().len();
    (0usize..8)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec((0..c, 0usize..3), n),
                prop::collection::vec((0..n.max(1), 0..n.max(1), 0usize..3), 0..=2 * n),
            )
        })
        .prop_map(move |(nodes, rels)| build(nodes, rels, c))
}

fn build(nodes: Vec<(usize, usize)>, rels: Vec<(usize, usize, usize)>, c: usize) -> RadiologyGraph {
    let n = nodes.len();
    let nodes: Vec<_> = nodes.into_iter().map(|(k, u)| (k, Uncertainty::ALL[u])).collect();
    let mut rels: Vec<Relation> = rels
        .into_iter()
        .filter(|&(h, t, _)| h != t && h < n && t < n)
        .map(|(h, t, k)| Relation::new(h, t, RelationType::ALL[k]))
        .collect();
    rels.sort();
    rels.dedup();
    RadiologyGraph::new(&nodes, rels, c).unwrap()
}

/// `g` with `extra` entities appended and `extra_rels` added; existing ids are kept.
fn extend(g: &RadiologyGraph, extra: &[(usize, usize)], extra_rels: &[(usize, usize, usize)]) -> RadiologyGraph {
    let mut nodes: Vec<(usize, usize)> = g.entities().iter().map(|e| (e.class_id, e.uncertainty.index())).collect();
    nodes.extend_from_slice(extra);
    let mut rels: Vec<(usize, usize, usize)> = g.relations().iter().map(|r| (r.head, r.tail, r.kind.index())).collect();
    rels.extend(extra_rels.iter().map(|&(h, t, k)| (h % nodes.len().max(1), t % nodes.len().max(1), k)));
    build(nodes, rels, classes().len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn self_score_is_perfect(corpus in prop::collection::vec(arb_graph(), 1..5)) {
        let e = entity_micro_prf(&corpus, &corpus).unwrap();
        let r = relation_micro_prf(&corpus, &corpus).unwrap();
        prop_assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        prop_assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn true_positives_never_exceed_either_side(pred in arb_graph(), gt in arb_graph()) {
        let e = entity_micro_prf(&[pred.clone()], &[gt.clone()]).unwrap();
        prop_assert!(e.tp <= pred.entities().len().min(gt.entities().len()));
        prop_assert_eq!(e.tp + e.fp, pred.entities().len());
        prop_assert_eq!(e.tp + e.fn_, gt.entities().len());
        let r = relation_micro_prf(&[pred.clone()], &[gt.clone()]).unwrap();
        prop_assert!(r.tp <= pred.relations().len().min(gt.relations().len()));
        let loose = relation_micro_prf_with(&[pred], &[gt], true).unwrap();
        prop_assert!(loose.tp >= r.tp);
    }

    #[test]
    fn adding_predictions_moves_rates_the_right_way(pred in arb_graph(), gt in arb_graph(), pick in any::<prop::sample::Index>(), wrong in 0usize..3) {
        let base = entity_micro_prf(&[pred.clone()], &[gt.clone()]).unwrap();
        if !gt.entities().is_empty() {
            // a correct entity: copy one from the ground truth
            let e = gt.entity(pick.index(gt.entities().len()));
            let more = extend(&pred, &[(e.class_id, e.uncertainty.index())], &[]);
            prop_assert!(entity_micro_prf(&[more], &[gt.clone()]).unwrap().recall >= base.recall);
        }
        // an incorrect entity: a class/uncertainty pair absent from the ground truth
        let c = classes().len();
        let absent = (0..c * 3)
            .map(|k| (k / 3, (k + wrong) % 3))
            .find(|&(k, u)| !gt.entities().iter().any(|e| e.class_id == k && e.uncertainty.index() == u))
            .unwrap();
        let more = extend(&pred, &[absent], &[]);
        prop_assert!(entity_micro_prf(&[more], &[gt]).unwrap().precision <= base.precision);
    }

    #[test]
    fn text_metrics_are_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
        for v in [bleu1(&a, &b), rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if !tokenize(&a).is_empty() {
            prop_assert!((bleu1(&a, &a) - 1.0).abs() < 1e-15);
            prop_assert!((rouge_l(&a, &a) - 1.0).abs() < 1e-15);
        }
        if rouge_l(&a, &b) == 1.0 {
            prop_assert_eq!(tokenize(&a), tokenize(&b));
        }
    }

    #[test]
    fn reports_cover_every_entity_and_are_deterministic(g in arb_graph(), sentence in any::<bool>()) {
        let c = classes();
        let rules = ReportRules {
            modifier_policy: if sentence { ModifierPolicy::Sentence } else { ModifierPolicy::Fold },
            ..ReportRules::default()
        };
        let text = graph_to_report(&g, &c, &rules);
        prop_assert_eq!(&text, &graph_to_report(&g.clone(), &c, &rules));
        let tokens = tokenize(&text);
        for e in g.entities() {
            let name = c.name(e.class_id);
            prop_assert!(tokens.iter().any(|t| t == name), "{} missing from {:?}", name, text);
        }
    }

    #[test]
    fn adding_to_a_graph_never_clears_a_label(
        g in arb_graph(),
        extra in prop::collection::vec((0usize..32, 0usize..3), 0..4),
        extra_rels in prop::collection::vec((0usize..12, 0usize..12, 0usize..3), 0..6),
    ) {
        let c = classes();
        let mapping = PathologyMapping::radiology_default(&c).unwrap();
        let before = graph_to_labels(&g, &c, &mapping);
        let after = graph_to_labels(&extend(&g, &extra, &extra_rels), &c, &mapping);
        for (label, positive) in &before.0 {
            prop_assert!(!positive || after.0[label], "{} flipped", label);
        }
    }
}
