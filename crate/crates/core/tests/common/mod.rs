#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rumour_stance::{Corpus, Label, Platform, Post, Split, Thread};
use serde_json::json;

pub const EXAMPLE_SOURCE: &str =
    "Darren Wilson is a six year veteran of the #Ferguson Police and had no disciplinary actions against him.";

fn post(id: &str, text: &str, parent: Option<&str>, label: Label) -> Post {
    Post {
        id: id.into(),
        text: text.into(),
        parent_id: parent.map(str::to_string),
        platform: Platform::Twitter,
        label: Some(label),
    }
}

/// The four-post example thread with one nested reply.
pub fn example_thread() -> Thread {
    Thread::new(
        post("te1", EXAMPLE_SOURCE, None, Label::Support),
        vec![
            post("te2", "Can we see video proof", Some("te1"), Label::Query),
            post("te3", "HE ISN'T THE SHOOTER RT [MENTION]", Some("te1"), Label::Comment),
            post("te4", "[MENTION] well who is #Ferguson", Some("te3"), Label::Comment),
        ],
    )
    .unwrap()
}

pub fn example_corpus() -> Corpus {
    Corpus::new(vec![example_thread()], Split::Train).unwrap()
}

/// Writes one thread in the raw directory layout:
/// `<root>/<topic>/<source_id>/{source-tweet,replies}/<id>.json`.
pub fn write_twitter_thread(root: &Path, topic: &str, source: (&str, &str), replies: &[(&str, &str, &str)]) {
    let dir = root.join(topic).join(source.0);
    fs::create_dir_all(dir.join("source-tweet")).unwrap();
    fs::create_dir_all(dir.join("replies")).unwrap();
    let src = json!({"id_str": source.0, "text": source.1, "in_reply_to_status_id_str": null});
    fs::write(dir.join("source-tweet").join(format!("{}.json", source.0)), src.to_string()).unwrap();
    for (id, text, parent) in replies {
        let r = json!({"id_str": id, "text": text, "in_reply_to_status_id_str": parent});
        fs::write(dir.join("replies").join(format!("{id}.json")), r.to_string()).unwrap();
    }
}

pub fn write_key(root: &Path, file: &str, labels: &[(&str, &str)]) {
    let map: serde_json::Map<String, serde_json::Value> =
        labels.iter().map(|(id, l)| (id.to_string(), json!(l))).collect();
    fs::write(root.join(file), json!({"subtaskaenglish": map}).to_string()).unwrap();
}

/// Central-difference relative error as used by all gradient checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Labeled pairs whose reply text carries one cue word per class plus filler.
pub fn cue_pairs(n: usize, seed: u64) -> Vec<rumour_stance::SequencePair> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cues = [["confirmed", "true"], ["fake", "false"], ["really", "why"], ["lol", "whatever"]];
    let filler = ["the", "police", "said", "today", "officer", "news", "city", "people"];
    (0..n)
        .map(|i| {
            let c = i % 4;
            let mut words: Vec<&str> = (0..3).map(|_| filler[rng.random_range(0..filler.len())]).collect();
            words.insert(rng.random_range(0..=words.len()), cues[c][rng.random_range(0..2)]);
            rumour_stance::SequencePair {
                first: words.join(" "),
                second: "officer named in shooting".into(),
                post_id: format!("p{i:03}"),
                label: Label::from_index(c),
            }
        })
        .collect()
}
