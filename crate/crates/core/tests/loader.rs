mod common;

use common::{write_key, write_twitter_thread};
use rumour_stance::corpus::{load_rumoureval_dir, LoadError};
use rumour_stance::{Label, Split};

#[test]
fn empty_directory_reports_missing_label_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_rumoureval_dir(dir.path(), Split::Train).unwrap_err();
    match err {
        LoadError::MissingLabelFile { expected, .. } => assert!(expected.contains("train-key.json")),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn one_thread_two_posts() {
    let dir = tempfile::tempdir().unwrap();
    write_twitter_thread(dir.path(), "ferguson", ("100", "Police name the officer"), &[("101", "@bob source?", "100")]);
    write_key(dir.path(), "train-key.json", &[("100", "support"), ("101", "query")]);
    let corpus = load_rumoureval_dir(dir.path(), Split::Train).unwrap();
    assert_eq!(corpus.threads.len(), 1);
    assert_eq!(corpus.num_posts(), 2);
    let t = &corpus.threads[0];
    assert_eq!(t.source.label, Some(Label::Support));
    assert_eq!(t.replies[0].parent_id.as_deref(), Some("100"));
    assert_eq!(t.replies[0].text, "@bob source?");
}

#[test]
fn orphan_reply_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_twitter_thread(dir.path(), "t", ("1", "src"), &[("2", "reply", "999")]);
    write_key(dir.path(), "dev-key.json", &[("1", "comment"), ("2", "comment")]);
    match load_rumoureval_dir(dir.path(), Split::Dev).unwrap_err() {
        LoadError::OrphanReply { post_id, parent_id } => assert_eq!((post_id.as_str(), parent_id.as_str()), ("2", "999")),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn unlisted_threads_belong_to_another_split() {
    let dir = tempfile::tempdir().unwrap();
    write_twitter_thread(dir.path(), "t", ("1", "train thread"), &[]);
    write_twitter_thread(dir.path(), "t", ("5", "dev thread"), &[("6", "yes", "5")]);
    write_key(dir.path(), "train-key.json", &[("1", "support")]);
    write_key(dir.path(), "dev-key.json", &[("5", "deny"), ("6", "comment")]);
    let train = load_rumoureval_dir(dir.path(), Split::Train).unwrap();
    let dev = load_rumoureval_dir(dir.path(), Split::Dev).unwrap();
    assert_eq!(train.num_posts(), 1);
    assert_eq!(dev.num_posts(), 2);
    assert_eq!(dev.class_counts().unwrap(), [0, 1, 0, 1]);
}

#[test]
fn labeled_split_requires_every_label() {
    let dir = tempfile::tempdir().unwrap();
    write_twitter_thread(dir.path(), "t", ("1", "src"), &[("2", "reply", "1")]);
    write_key(dir.path(), "train-key.json", &[("1", "support")]);
    assert!(matches!(
        load_rumoureval_dir(dir.path(), Split::Train),
        Err(LoadError::MissingLabel { post_id }) if post_id == "2"
    ));
}

#[test]
fn test_split_may_be_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    write_twitter_thread(dir.path(), "t", ("1", "src"), &[("2", "reply", "1")]);
    let corpus = load_rumoureval_dir(dir.path(), Split::Test).unwrap();
    assert_eq!(corpus.num_posts(), 2);
    assert!(corpus.posts().all(|(_, p)| p.label.is_none()));
}

#[test]
fn reddit_threads_load() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("reddit").join("abc");
    std::fs::create_dir_all(t.join("source-tweet")).unwrap();
    std::fs::create_dir_all(t.join("replies")).unwrap();
    let src = serde_json::json!({"data": {"children": [{"data": {"id": "abc", "title": "Title", "selftext": "body"}}]}});
    std::fs::write(t.join("source-tweet/abc.json"), src.to_string()).unwrap();
    let rep = serde_json::json!({"data": {"id": "def", "body": "nope", "parent_id": "t3_abc"}});
    std::fs::write(t.join("replies/def.json"), rep.to_string()).unwrap();
    write_key(dir.path(), "train-key.json", &[("abc", "support"), ("def", "deny")]);
    let corpus = load_rumoureval_dir(dir.path(), Split::Train).unwrap();
    let th = &corpus.threads[0];
    assert_eq!(th.source.text, "Title body");
    assert_eq!(th.replies[0].parent_id.as_deref(), Some("abc"));
}
