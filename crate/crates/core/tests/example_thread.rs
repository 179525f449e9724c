mod common;

use common::{example_corpus, EXAMPLE_SOURCE};
use rumour_stance::textprep::{build_pairs, render_encoder_input};
use rumour_stance::MarkerSet;

#[test]
fn rendered_inputs_match_the_example_thread() {
    let corpus = example_corpus();
    let markers = MarkerSet::default();
    let rendered: Vec<String> = build_pairs(&corpus).iter().map(|p| render_encoder_input(p, &markers)).collect();
    let expected = vec![
        format!("<s> {EXAMPLE_SOURCE} </s> </s> </s>"),
        format!("<s> Can we see video proof </s> </s> {EXAMPLE_SOURCE} </s>"),
        format!("<s> HE ISN'T THE SHOOTER RT [MENTION] </s> </s> {EXAMPLE_SOURCE} </s>"),
        format!("<s> [MENTION] well who is #Ferguson HE ISN'T THE SHOOTER RT [MENTION] </s> </s> {EXAMPLE_SOURCE} </s>"),
    ];
    assert_eq!(rendered, expected);
}

#[test]
fn pairs_carry_ids_and_labels() {
    let pairs = build_pairs(&example_corpus());
    let ids: Vec<&str> = pairs.iter().map(|p| p.post_id.as_str()).collect();
    assert_eq!(ids, ["te1", "te2", "te3", "te4"]);
    let labels: Vec<&str> = pairs.iter().map(|p| p.label.unwrap().as_str()).collect();
    assert_eq!(labels, ["support", "query", "comment", "comment"]);
    assert_eq!(pairs[0].second, "");
}
