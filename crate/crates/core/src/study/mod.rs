//! Pre/post questionnaires, the Likert merge, shift classification and
//! research exports.

mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::imagegen::StimulusManifest;
use crate::rules::{GameKind, PlayerId, UnknownGame};

pub use export::{ExportError, ResearchBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StudyError {
    #[error("unknown answer option \"{0}\"")]
    UnknownOption(String),
    #[error("\"{answer}\" is not an option for {item}")]
    OptionNotAllowed { item: String, answer: String },
    #[error("unknown questionnaire item \"{0}\"")]
    UnknownItem(String),
    #[error("item {0} answered twice")]
    DuplicateItem(String),
    #[error("required item {0} not answered")]
    MissingItem(String),
    #[error("{participant} already answered the {stage} {game} questionnaire")]
    AlreadyResponded { participant: PlayerId, game: GameKind, stage: &'static str },
    #[error("questionnaire for {0} answered in the wrong game")]
    WrongGame(GameKind),
    #[error("no {0} responses")]
    EmptyStage(&'static str),
    #[error("stimulus set missing category \"{0}\"")]
    MissingStimuli(String),
    #[error(transparent)]
    UnknownGame(#[from] UnknownGame),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceOption {
    Yes,
    No,
    Unsure,
    StronglyDisagree,
    Disagree,
    Neutral,
    Agree,
    StronglyAgree,
}

impl ChoiceOption {
    pub fn label(self) -> &'static str {
        match self {
            ChoiceOption::Yes => "Yes",
            ChoiceOption::No => "No",
            ChoiceOption::Unsure => "Unsure",
            ChoiceOption::StronglyDisagree => "Strongly Disagree",
            ChoiceOption::Disagree => "Disagree",
            ChoiceOption::Neutral => "Neutral",
            ChoiceOption::Agree => "Agree",
            ChoiceOption::StronglyAgree => "Strongly Agree",
        }
    }

    pub fn parse(raw: &str) -> Result<Self, StudyError> {
        let key: String = raw.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "yes" => ChoiceOption::Yes,
            "no" => ChoiceOption::No,
            "unsure" => ChoiceOption::Unsure,
            "stronglydisagree" => ChoiceOption::StronglyDisagree,
            "disagree" => ChoiceOption::Disagree,
            "neutral" => ChoiceOption::Neutral,
            "agree" => ChoiceOption::Agree,
            "stronglyagree" => ChoiceOption::StronglyAgree,
            _ => return Err(StudyError::UnknownOption(raw.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergedBucket {
    Agree,
    Neutral,
    Disagree,
}

impl MergedBucket {
    pub fn as_str(self) -> &'static str {
        match self {
            MergedBucket::Agree => "agree",
            MergedBucket::Neutral => "neutral",
            MergedBucket::Disagree => "disagree",
        }
    }

    fn rank(self) -> i8 {
        match self {
            MergedBucket::Agree => 0,
            MergedBucket::Neutral => 1,
            MergedBucket::Disagree => 2,
        }
    }
}

/// Collapses an answer to agree/neutral/disagree. Unsure lands in neutral;
/// exports flag those rows.
pub fn merge_likert(answer: ChoiceOption) -> MergedBucket {
    use ChoiceOption::*;
    match answer {
        StronglyAgree | Agree | Yes => MergedBucket::Agree,
        Neutral | Unsure => MergedBucket::Neutral,
        Disagree | StronglyDisagree | No => MergedBucket::Disagree,
    }
}

pub fn merge_flag(answer: ChoiceOption) -> &'static str {
    if answer == ChoiceOption::Unsure {
        "unsure_as_neutral"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemKind {
    SingleChoice { options: Vec<ChoiceOption> },
    OpenEnded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub prompt: String,
    #[serde(flatten)]
    pub kind: ItemKind,
}

impl Item {
    fn choice(id: &str, prompt: &str, options: &[ChoiceOption]) -> Self {
        Item {
            id: id.into(),
            prompt: prompt.into(),
            kind: ItemKind::SingleChoice { options: options.to_vec() },
        }
    }

    fn open(id: &str, prompt: &str) -> Self {
        Item { id: id.into(), prompt: prompt.into(), kind: ItemKind::OpenEnded }
    }
}

pub const DD_GOOD_IMAGES: &str = "dd.good_images";
pub const SA_NOT_HARMFUL: &str = "sa.not_harmful";

/// The choice item each instrument's shift analysis runs on.
pub fn headline_item(game: GameKind) -> &'static str {
    match game {
        GameKind::DiversityDuel => DD_GOOD_IMAGES,
        GameKind::SecretAgent => SA_NOT_HARMFUL,
    }
}

pub fn headline_prompt(game: GameKind) -> String {
    instrument_items(game).remove(0).prompt
}

/// Items are identical for the pre and post stage of each game.
pub fn instrument_items(game: GameKind) -> Vec<Item> {
    use ChoiceOption::*;
    match game {
        GameKind::DiversityDuel => vec![
            Item::choice(DD_GOOD_IMAGES, "Do you think these are good images?", &[Yes, No, Unsure]),
            Item::open("dd.why", "Why is that?"),
            Item::open("dd.why_generated", "Why do you think the images were generated this way?"),
        ],
        GameKind::SecretAgent => vec![
            Item::choice(
                SA_NOT_HARMFUL,
                "Bias in AI is not harmful",
                &[StronglyDisagree, Disagree, Neutral, Agree, StronglyAgree, Unsure],
            ),
            Item::open("sa.why", "Why do you think that?"),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusBinding {
    pub categories: Vec<String>,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub game: GameKind,
    pub stage: Stage,
    pub items: Vec<Item>,
    pub stimuli: Option<StimulusBinding>,
}

/// Categories shown on the Diversity Duel slides for each stage.
pub fn stimulus_categories(stage: Stage) -> [&'static str; 2] {
    match stage {
        Stage::Pre => ["doctor", "nurse"],
        Stage::Post => ["executive", "executive assistant"],
    }
}

/// Builds an instrument. Diversity Duel binds its stage's image set, which
/// must be present in `stimuli`.
pub fn get_instrument(
    game: GameKind,
    stage: Stage,
    stimuli: Option<&StimulusManifest>,
) -> Result<Questionnaire, StudyError> {
    let binding = match game {
        GameKind::SecretAgent => None,
        GameKind::DiversityDuel => {
            let wanted = stimulus_categories(stage);
            let manifest = stimuli.ok_or_else(|| StudyError::MissingStimuli(wanted[0].into()))?;
            let mut images = 0;
            for category in wanted {
                let n = manifest.count_for(category);
                if n == 0 {
                    return Err(StudyError::MissingStimuli(category.into()));
                }
                images += n;
            }
            Some(StimulusBinding { categories: wanted.map(String::from).to_vec(), images })
        }
    };
    Ok(Questionnaire { game, stage, items: instrument_items(game), stimuli: binding })
}

pub fn discussion_prompts(game: GameKind) -> Vec<&'static str> {
    match game {
        GameKind::DiversityDuel => vec![
            "Did this game change or not change the way you think about how AI creates images? Why (not)?",
        ],
        GameKind::SecretAgent => vec!["Can bias be helpful? Is it always harmful? Why (not)?"],
    }
}

pub fn discussion_prompts_for(game: &str) -> Result<Vec<&'static str>, StudyError> {
    Ok(discussion_prompts(game.parse()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub item: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub participant: PlayerId,
    pub game: GameKind,
    pub stage: Stage,
    pub answers: Vec<Answer>,
    #[serde(default)]
    pub submitted_at: u64,
}

impl Response {
    pub fn answer(&self, item: &str) -> Option<&str> {
        self.answers.iter().find(|a| a.item == item).map(|a| a.answer.as_str())
    }

    pub fn choice(&self, item: &str) -> Option<ChoiceOption> {
        self.answer(item).and_then(|a| ChoiceOption::parse(a).ok())
    }
}

/// Choice answers must come from the item's options; choice items are required.
pub fn validate_response(response: &Response) -> Result<(), StudyError> {
    let items = instrument_items(response.game);
    let mut seen = BTreeSet::new();
    for answer in &response.answers {
        let item = items
            .iter()
            .find(|i| i.id == answer.item)
            .ok_or_else(|| StudyError::UnknownItem(answer.item.clone()))?;
        if !seen.insert(answer.item.as_str()) {
            return Err(StudyError::DuplicateItem(answer.item.clone()));
        }
        if let ItemKind::SingleChoice { options } = &item.kind {
            let option = ChoiceOption::parse(&answer.answer)?;
            if !options.contains(&option) {
                return Err(StudyError::OptionNotAllowed {
                    item: item.id.clone(),
                    answer: answer.answer.clone(),
                });
            }
        }
    }
    for item in &items {
        if matches!(item.kind, ItemKind::SingleChoice { .. }) && !seen.contains(item.id.as_str()) {
            return Err(StudyError::MissingItem(item.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub agree: usize,
    pub neutral: usize,
    pub disagree: usize,
}

impl BucketCounts {
    pub fn add(&mut self, bucket: MergedBucket) {
        match bucket {
            MergedBucket::Agree => self.agree += 1,
            MergedBucket::Neutral => self.neutral += 1,
            MergedBucket::Disagree => self.disagree += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.agree + self.neutral + self.disagree
    }

    /// (agree, neutral, disagree)
    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.agree, self.neutral, self.disagree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Increased,
    Decreased,
    Unchanged,
}

/// Movement relative to the critical pole: closer is `Increased`.
pub fn classify_shift(pre: MergedBucket, post: MergedBucket, critical_pole: MergedBucket) -> Shift {
    let before = (pre.rank() - critical_pole.rank()).abs();
    let after = (post.rank() - critical_pole.rank()).abs();
    match after.cmp(&before) {
        std::cmp::Ordering::Less => Shift::Increased,
        std::cmp::Ordering::Greater => Shift::Decreased,
        std::cmp::Ordering::Equal => Shift::Unchanged,
    }
}

/// Disagreeing with "good images" / "not harmful" is the critical stance.
pub const CRITICAL_POLE: MergedBucket = MergedBucket::Disagree;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftCounts {
    pub increased: usize,
    pub decreased: usize,
    pub unchanged: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftTable {
    pub item: String,
    pub pre: BucketCounts,
    pub post: BucketCounts,
    pub paired: ShiftCounts,
    /// Post respondents with no pre answer: counted in totals, not paired.
    pub anomalies: Vec<PlayerId>,
}

fn bucket_by_participant(
    responses: &[&Response],
    item: &str,
) -> Result<BTreeMap<PlayerId, MergedBucket>, StudyError> {
    let mut out = BTreeMap::new();
    for r in responses {
        if let Some(raw) = r.answer(item) {
            out.insert(r.participant.clone(), merge_likert(ChoiceOption::parse(raw)?));
        }
    }
    Ok(out)
}

pub fn summarize_shifts(
    pre: &[&Response],
    post: &[&Response],
    item: &str,
) -> Result<ShiftTable, StudyError> {
    let pre_buckets = bucket_by_participant(pre, item)?;
    let post_buckets = bucket_by_participant(post, item)?;
    if pre_buckets.is_empty() {
        return Err(StudyError::EmptyStage("pre"));
    }
    if post_buckets.is_empty() {
        return Err(StudyError::EmptyStage("post"));
    }
    let mut table = ShiftTable {
        item: item.to_string(),
        pre: BucketCounts::default(),
        post: BucketCounts::default(),
        paired: ShiftCounts::default(),
        anomalies: Vec::new(),
    };
    pre_buckets.values().for_each(|b| table.pre.add(*b));
    for (participant, after) in &post_buckets {
        table.post.add(*after);
        match pre_buckets.get(participant) {
            Some(before) => match classify_shift(*before, *after, CRITICAL_POLE) {
                Shift::Increased => table.paired.increased += 1,
                Shift::Decreased => table.paired.decreased += 1,
                Shift::Unchanged => table.paired.unchanged += 1,
            },
            None => table.anomalies.push(participant.clone()),
        }
    }
    Ok(table)
}
