use biasgames_core::rules::*;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/validation_vectors.json");

/// Independent tokenizer: walk characters, trim by hand.
fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split(char::is_whitespace) {
        let chars: Vec<char> = raw.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let end = chars.iter().rposition(|c| c.is_alphanumeric());
        if let (Some(s), Some(e)) = (start, end) {
            let word: String = chars[s..=e].iter().collect::<String>().to_lowercase();
            out.push(word);
        }
    }
    out
}

fn oracle_verdict(tokens: &[String], limit: Option<usize>, ban: &[String]) -> Verdict {
    for t in tokens {
        if ban.contains(t) {
            return Verdict::BannedWord(t.clone());
        }
    }
    match limit {
        Some(l) if tokens.len() > l => Verdict::TooManyWords(tokens.len()),
        _ => Verdict::Valid,
    }
}

#[test]
fn fixture_matches_generator() {
    let expected = vectors_json();
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(FIXTURE, &expected).unwrap();
    }
    let on_disk = std::fs::read_to_string(FIXTURE).expect("run with BLESS=1 to create the fixture");
    assert!(on_disk == expected, "fixtures/validation_vectors.json is stale; rerun with BLESS=1");
}

#[test]
fn every_case_agrees_with_the_oracle() {
    // Checks the generator directly so a BLESS run in parallel cannot race the file.
    let file: VectorFile = serde_json::from_str(&vectors_json()).unwrap();
    assert!(file.cases.len() >= 200, "{} cases", file.cases.len());
    let mut ids = std::collections::BTreeSet::new();
    for case in &file.cases {
        assert!(ids.insert(case.id.as_str()), "duplicate id {}", case.id);
        let tokens = oracle_tokens(&case.text);
        assert_eq!(tokens, case.tokens, "{}", case.id);
        assert_eq!(oracle_verdict(&tokens, case.limit, &case.ban_list), case.verdict, "{}", case.id);
        let ban = BanList::new(&case.ban_list);
        assert_eq!(validate_text(&case.text, case.limit.unwrap_or(usize::MAX), &ban), case.verdict, "{}", case.id);
    }
}

#[test]
fn captions_are_present_with_hand_counts() {
    let file = validation_vectors();
    let hand = [4, 6, 5, 16];
    for (i, tag) in ["a", "b", "c", "d"].iter().enumerate() {
        let case = file.cases.iter().find(|c| c.id == format!("caption-{tag}")).unwrap();
        assert_eq!(case.tokens.len(), hand[i], "{}", case.text);
        assert_eq!(case.verdict, Verdict::Valid, "{}", case.id);
    }
    let c = file.cases.iter().find(|c| c.id == "caption-c-limit4").unwrap();
    assert_eq!(c.verdict, Verdict::TooManyWords(5));
    let d = file.cases.iter().find(|c| c.id == "caption-d-limit6").unwrap();
    assert_eq!(d.verdict, Verdict::TooManyWords(16));
    assert!(d.tokens.contains(&"steel-toe".to_string()));
}
