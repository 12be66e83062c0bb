//! Shared prompt-validation vectors for client implementations.
//!
//! The generated list is checked in as `fixtures/validation_vectors.json`;
//! clients must reproduce `tokens` and `verdict` for every case.

use serde::{Deserialize, Serialize};

use super::text::{tokenize, validate_text, BanList, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub id: String,
    pub text: String,
    /// `None` means no word budget.
    pub limit: Option<usize>,
    pub ban_list: Vec<String>,
    pub tokens: Vec<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorFile {
    pub version: u32,
    pub rules: String,
    pub cases: Vec<ValidationCase>,
}

/// Caption prompts from the workshop outputs: (text, word count).
pub const CAPTION_PROMPTS: [(&str, usize); 4] = [
    ("color professors classroom humans", 4),
    ("different ethnicity teachers with disability emotions", 6),
    ("different looking construction workers stressed", 5),
    (
        "men and women, different races, ages, heights, with disabilities, wearing construction vests, helmets, and steel-toe boots.",
        16,
    ),
];

/// Limits the captions were played under; the last one has no stated budget.
pub const CAPTION_LIMITS: [Option<usize>; 4] = [Some(4), Some(6), Some(5), None];

const POOL: [&str; 10] = [
    "nurses", "older", "wheelchair", "smiling", "women", "tall", "busy", "hijab", "young", "pilots",
];

struct Builder {
    cases: Vec<ValidationCase>,
}

impl Builder {
    fn add(&mut self, id: impl Into<String>, text: &str, limit: Option<usize>, ban: &BanList) {
        let verdict = validate_text(text, limit.unwrap_or(usize::MAX), ban);
        self.cases.push(ValidationCase {
            id: id.into(),
            text: text.to_string(),
            limit,
            ban_list: ban.iter().map(String::from).collect(),
            tokens: tokenize(text),
            verdict,
        });
    }
}

pub fn validation_vectors() -> VectorFile {
    let default_ban = BanList::default();
    let mut b = Builder { cases: Vec::new() };

    for (i, ((text, _), limit)) in CAPTION_PROMPTS.iter().zip(CAPTION_LIMITS).enumerate() {
        let tag = (b'a' + i as u8) as char;
        b.add(format!("caption-{tag}"), text, limit, &default_ban);
        if let Some(l) = limit {
            b.add(format!("caption-{tag}-tight"), text, Some(l - 1), &default_ban);
        }
        for l in [4, 5, 6] {
            b.add(format!("caption-{tag}-limit{l}"), text, Some(l), &default_ban);
        }
    }

    let edge: &[(&str, &str, Option<usize>)] = &[
        ("empty", "", Some(6)),
        ("blank", "   ", Some(6)),
        ("tabs-newlines", "tall\tnurses\nsmiling\r\nteam", Some(4)),
        ("banned-plain", "diverse teachers", Some(6)),
        ("banned-capital", "Diversity now", Some(6)),
        ("banned-shout", "DIVERSE DOCTORS", Some(6)),
        ("banned-comma", "doctors, diverse, smiling", Some(6)),
        ("banned-quoted", "\"diverse\" nurses", Some(6)),
        ("banned-curly", "\u{201c}diversity\u{201d} matters", Some(6)),
        ("banned-parens", "(diverse) pilots", Some(6)),
        ("banned-bang", "diversity!!!", Some(6)),
        ("banned-and-long", "diverse a b c d e f g", Some(6)),
        ("banned-late-and-long", "a b c d e f g diverse", Some(6)),
        ("banned-twice", "diverse diversity", Some(6)),
        ("not-banned-prefix", "non-diverse crowd", Some(6)),
        ("not-banned-suffix", "diversely dressed", Some(6)),
        ("not-banned-compound", "diverse-looking nurses", Some(6)),
        ("not-banned-plural", "diversities abound", Some(6)),
        ("seven-at-six", "one two three four five six seven", Some(6)),
        ("six-at-six", "one two three four five six", Some(6)),
        ("hyphen-one-word", "steel-toe boots", Some(2)),
        ("apostrophe", "don't stop", Some(2)),
        ("punct-only-tokens", "nurses - -- ... !!", Some(1)),
        ("ellipsis", "doctors...", Some(1)),
        ("emoji-dropped", "\u{1f469}\u{200d}\u{2695}\u{fe0f} doctors", Some(1)),
        ("accented", "M\u{e9}DECINS \u{e9}l\u{e8}ves", Some(2)),
        ("cjk", "\u{5973}\u{6027} \u{533b}\u{751f}", Some(2)),
        ("digits", "50 year old pilots", Some(4)),
        ("mixed-case-hyphen", "Steel-Toe", Some(1)),
        ("leading-trailing-space", "  tall nurses  ", Some(2)),
        ("double-space", "tall  nurses", Some(2)),
        ("nbsp", "tall\u{a0}nurses", Some(1)),
        ("limit-one-ok", "nurses", Some(1)),
        ("limit-one-over", "tall nurses", Some(1)),
        ("unlimited-long", "a b c d e f g h i j k l m n o p q r s t", None),
        ("unlimited-banned", "a b c diverse", None),
        ("category-style", "construction workers wearing hard hats", Some(8)),
    ];
    for (id, text, limit) in edge {
        b.add(*id, text, *limit, &default_ban);
    }

    let custom = BanList::new(["man", "men", "white"]);
    for (id, text) in [
        ("custom-hit", "white coats"),
        ("custom-plural", "men at work"),
        ("custom-default-word-allowed", "diverse men"),
        ("custom-miss", "women at work"),
        ("custom-substring", "manager mentor"),
    ] {
        b.add(id, text, Some(6), &custom);
    }
    let empty = BanList::new(Vec::<String>::new());
    b.add("no-ban-list", "diverse diversity", Some(6), &empty);

    // Every word count against every budget.
    for n in 0..=10 {
        let text: Vec<&str> = POOL.iter().cycle().skip(n).take(n).copied().collect();
        let text = text.join(" ");
        for limit in 1..=10 {
            b.add(format!("count{n}-limit{limit}"), &text, Some(limit), &default_ban);
        }
    }

    // A banned word in each position of a six-word prompt, under, at and over budget.
    for pos in 0..6 {
        let mut words: Vec<&str> = POOL[..6].to_vec();
        let banned = if pos % 2 == 0 { "Diverse" } else { "diversity," };
        words[pos] = banned;
        let text = words.join(" ");
        for limit in [5, 6, 7] {
            b.add(format!("banned-pos{pos}-limit{limit}"), &text, Some(limit), &default_ban);
        }
    }

    // Turn-sized two-word additions as typed during a relay.
    for (i, pair) in POOL.chunks(2).enumerate() {
        let text = pair.join(" ");
        for limit in [1, 2, 3] {
            b.add(format!("turn{i}-limit{limit}"), &text, Some(limit), &default_ban);
        }
    }

    VectorFile {
        version: 1,
        rules: "split on whitespace; trim leading and trailing non-alphanumeric characters; lowercase; \
                drop empty tokens; banned word reported before word count"
            .into(),
        cases: b.cases,
    }
}

pub fn vectors_json() -> String {
    let mut s = serde_json::to_string_pretty(&validation_vectors()).expect("vectors serialize");
    s.push('\n');
    s
}
