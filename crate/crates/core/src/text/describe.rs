use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::relation::{Relation, RELATION_DISTANCE};
use crate::error::{Error, Result};
use crate::scene::{CategoryTable, Scene};

const BUNDLED_TEMPLATES: &str = include_str!("../../data/templates.json");

pub const NEXT_TO: &str = "next to";

/// Sentence openers and one template per relation label plus `next to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub openers: Vec<String>,
    pub relations: BTreeMap<String, String>,
}

impl Templates {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Templates = serde_json::from_str(text)?;
        if t.openers.is_empty() {
            return Err(Error::invalid("template file has no openers"));
        }
        let labels = super::RelationType::ALL.iter().map(|r| r.label()).chain([NEXT_TO]);
        for label in labels {
            let tpl = t.relations.get(label).ok_or_else(|| Error::invalid(format!("no template for `{label}`")))?;
            if !tpl.contains("{subject}") || !tpl.contains("{object}") {
                return Err(Error::invalid(format!("template for `{label}` lacks a placeholder")));
            }
        }
        Ok(t)
    }

    pub fn bundled() -> &'static Templates {
        static T: OnceLock<Templates> = OnceLock::new();
        T.get_or_init(|| Templates::from_json(BUNDLED_TEMPLATES).expect("bundled templates are valid"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescribeConfig {
    /// Chance that each later object gets a relational sentence.
    pub p_desc: f64,
    pub threshold: f64,
    /// Directional relations closer than this read as "next to".
    pub next_to_distance: f64,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        Self { p_desc: 0.7, threshold: RELATION_DISTANCE, next_to_distance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    /// Index of the object in the described scene.
    pub index: usize,
    pub category: String,
    /// 1 for the first described object of its category.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub sentences: Vec<String>,
    pub mentioned: Vec<Mention>,
    /// Relation behind each sentence after the first.
    pub relations: Vec<Relation>,
    pub seed: u64,
}

impl Description {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    /// The first `n` sentences with the objects they mention.
    pub fn truncated(&self, n: usize) -> Description {
        let keep = n.min(self.sentences.len());
        let dropped = self.sentences.len() - keep;
        Description {
            sentences: self.sentences[..keep].to_vec(),
            mentioned: self.mentioned[..self.mentioned.len() - dropped].to_vec(),
            relations: self.relations[..keep.saturating_sub(1)].to_vec(),
            seed: self.seed,
        }
    }
}

/// One line of a description dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub scene_path: String,
    pub sentences: Vec<String>,
    pub mentioned: Vec<MentionedCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MentionedCategory {
    pub category: String,
    pub ordinal: usize,
}

impl DescriptionRecord {
    pub fn new(scene_path: impl Into<String>, d: &Description) -> Self {
        Self {
            scene_path: scene_path.into(),
            sentences: d.sentences.clone(),
            mentioned: d.mentioned.iter().map(|m| MentionedCategory { category: m.category.clone(), ordinal: m.ordinal }).collect(),
        }
    }
}

const ORDINALS: [&str; 9] = ["second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];
const COUNTS: [&str; 2] = ["two", "three"];

pub fn ordinal_word(n: usize) -> Option<String> {
    match n {
        0 | 1 => None,
        2..=10 => Some(ORDINALS[n - 2].to_string()),
        _ => Some(format!("{n}th")),
    }
}

pub fn plural(name: &str) -> String {
    if ["s", "sh", "ch", "x"].iter().any(|e| name.ends_with(e)) {
        format!("{name}es")
    } else {
        format!("{name}s")
    }
}

fn article(phrase: &str) -> &'static str {
    if phrase.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn introduce(name: &str, ordinal: usize) -> String {
    let noun = match ordinal_word(ordinal) {
        Some(o) => format!("{o} {name}"),
        None => name.to_string(),
    };
    format!("{} {noun}", article(&noun))
}

fn refer(name: &str, ordinal: usize) -> String {
    match ordinal_word(ordinal) {
        Some(o) => format!("the {o} {name}"),
        None => format!("the {name}"),
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(" , ")),
    }
}

/// Rule-based description of the non-opening objects of `scene`.
pub fn generate_description(
    scene: &Scene,
    table: &CategoryTable,
    relations: &[Relation],
    cfg: &DescribeConfig,
    seed: u64,
) -> Result<Description> {
    describe_with(scene, table, relations, cfg, Templates::bundled(), seed)
}

pub fn describe_with(
    scene: &Scene,
    table: &CategoryTable,
    relations: &[Relation],
    cfg: &DescribeConfig,
    templates: &Templates,
    seed: u64,
) -> Result<Description> {
    if !(0.0..=1.0).contains(&cfg.p_desc) {
        return Err(Error::invalid(format!("p_desc must lie in [0, 1], got {}", cfg.p_desc)));
    }
    let eligible: Vec<usize> =
        scene.objects.iter().enumerate().filter(|(_, o)| !table.is_opening(o.category)).map(|(i, _)| i).collect();
    if eligible.is_empty() {
        return Err(Error::invalid("nothing to describe: the scene has no furniture"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = if eligible.len() >= 3 { rng.gen_range(2..=3) } else { eligible.len() };
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut mentioned = Vec::new();
    let mut mention = |i: usize, mentioned: &mut Vec<Mention>| {
        let c = scene.objects[i].category;
        let n = seen.entry(c).or_insert(0);
        *n += 1;
        mentioned.push(Mention { index: i, category: table.name(c).to_string(), ordinal: *n });
        *n
    };

    let mut groups: Vec<(usize, usize)> = Vec::new();
    for &i in &eligible[..first] {
        mention(i, &mut mentioned);
        let c = scene.objects[i].category;
        match groups.iter_mut().find(|g| g.0 == c) {
            Some(g) => g.1 += 1,
            None => groups.push((c, 1)),
        }
    }
    let items: Vec<String> = groups
        .iter()
        .map(|&(c, n)| match n {
            1 => introduce(table.name(c), 1),
            _ => format!("{} {}", COUNTS[n - 2], plural(table.name(c))),
        })
        .collect();
    let opener = templates.openers.choose(&mut rng).expect("openers are non-empty");
    let mut sentences = vec![format!("{opener} {} .", join_list(&items))];

    let mut described: HashSet<usize> = eligible[..first].iter().copied().collect();
    let mut used = Vec::new();
    for &i in &eligible[first..] {
        if !rng.gen_bool(cfg.p_desc) {
            continue;
        }
        let ci = scene.objects[i].category;
        let options: Vec<&Relation> = relations
            .iter()
            .filter(|r| {
                r.subject == i
                    && r.object < i
                    && r.distance < cfg.threshold
                    && described.contains(&r.object)
                    && scene.objects[r.object].category != ci
            })
            .collect();
        let Some(&&r) = options.choose(&mut rng) else {
            continue;
        };
        let ord = mention(i, &mut mentioned);
        described.insert(i);
        let label = if r.kind.is_directional() && r.distance < cfg.next_to_distance { NEXT_TO } else { r.kind.label() };
        let prior = mentioned.iter().find(|m| m.index == r.object).expect("object was described").ordinal;
        let object = refer(table.name(scene.objects[r.object].category), prior);
        let sentence = templates.relations[label]
            .replace("{subject}", &introduce(table.name(ci), ord))
            .replace("{object}", &object);
        sentences.push(sentence);
        used.push(r);
    }
    Ok(Description { sentences, mentioned, relations: used, seed })
}

/// Every word the generator can emit for `table`.
pub fn description_vocabulary(table: &CategoryTable, templates: &Templates) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut add = |text: &str| words.extend(super::tokenize_all(text));
    for t in templates.openers.iter().chain(templates.relations.values()) {
        add(t);
    }
    for name in table.names() {
        add(name);
        add(&plural(name));
    }
    for w in ORDINALS.iter().chain(&COUNTS).chain(&["a", "an", "the", "and"]) {
        add(w);
    }
    words.sort();
    words.dedup();
    words
}

