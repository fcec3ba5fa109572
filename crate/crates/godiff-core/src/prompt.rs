//! Dual-prompt generation: image-level prompts from tag extraction and
//! augmentation, object-level prompts from randomized templates.
//!
//! The tagger is a pluggable interface; the built-in stub derives tags from
//! simple raster statistics so the whole pipeline runs without pretrained
//! models. The sentence decoder is a fixed keyword-bucket template.

use std::collections::BTreeMap;

use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Ordered, deduplicated set of lowercase tags. Insertion order is preserved
/// so downstream decoding is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagSet {
    tags: Vec<String>,
}

impl TagSet {
    pub fn new() -> Self {
        TagSet::default()
    }

    pub fn from_tags<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = TagSet::new();
        for t in tags {
            set.insert(t.as_ref());
        }
        set
    }

    /// Inserts a tag, lowercased; empty strings and duplicates are ignored.
    pub fn insert(&mut self, tag: &str) {
        let tag = tag.trim().to_lowercase();
        if !tag.is_empty() && !self.tags.iter().any(|t| t == &tag) {
            self.tags.push(tag);
        }
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Descriptor pools for object-level prompt templates.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSets {
    pub objects: Vec<String>,
    pub actions: Vec<String>,
    pub weather: Vec<String>,
    pub scenes: Vec<String>,
    pub times: Vec<String>,
    /// category -> object descriptors consistent with it
    pub consistency: BTreeMap<String, Vec<String>>,
}

impl DescriptorSets {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        for (name, list) in [
            ("objects", &self.objects),
            ("actions", &self.actions),
            ("weather", &self.weather),
            ("scenes", &self.scenes),
            ("times", &self.times),
        ] {
            if list.is_empty() {
                violations.push(format!("descriptor set '{name}' is empty"));
            }
        }
        for (cat, objs) in &self.consistency {
            if objs.is_empty() {
                violations.push(format!("consistency map for '{cat}' is empty"));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

impl Default for DescriptorSets {
    fn default() -> Self {
        let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut consistency = BTreeMap::new();
        consistency.insert(
            "car".to_string(),
            strs(&["black car", "white car", "red car", "yellow taxi", "silver sedan"]),
        );
        consistency.insert(
            "person".to_string(),
            strs(&["person", "pedestrian", "person with an umbrella", "person in a coat"]),
        );
        DescriptorSets {
            objects: strs(&[
                "black car",
                "white car",
                "red car",
                "yellow taxi",
                "silver sedan",
                "person",
                "pedestrian",
                "person with an umbrella",
                "person in a coat",
            ]),
            actions: strs(&["parked", "moving", "waiting", "crossing", "standing"]),
            weather: strs(&["foggy", "rainy", "sunny", "snowy"]),
            scenes: strs(&["street", "intersection", "highway", "parking lot"]),
            times: strs(&["the night", "the day", "dusk", "dawn"]),
            consistency,
        }
    }
}

/// Scene-level prompt with tag provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrompt {
    pub text: String,
    pub source_tags: TagSet,
}

/// Object-level prompt with the chosen descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrompt {
    pub text: String,
    pub object: String,
    pub action: String,
    pub weather: String,
    pub scene: String,
    pub time: String,
    pub category: String,
}

/// Tag extraction interface (stands in for a captioning model).
pub trait Tagger: Send + Sync {
    fn id(&self) -> &'static str;
    fn tag(&self, image: &LabeledImage) -> TagSet;
}

/// Deterministic rule-based tagger: mean luminance -> bright|dim, mean color
/// -> a color name, plus the constant scene tag "street".
#[derive(Debug, Default)]
pub struct StubTagger;

fn color_name(means: [f64; 3]) -> &'static str {
    let [r, g, b] = means;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max - min < 0.1 {
        let lum = (r + g + b) / 3.0;
        if lum >= 0.7 {
            "white"
        } else if lum >= 0.3 {
            "gray"
        } else {
            "black"
        }
    } else if r >= g && r >= b {
        if g > b {
            "yellow"
        } else {
            "red"
        }
    } else if g >= r && g >= b {
        if b > r {
            "cyan"
        } else {
            "green"
        }
    } else if r > g {
        "magenta"
    } else {
        "blue"
    }
}

impl Tagger for StubTagger {
    fn id(&self) -> &'static str {
        "stub"
    }

    fn tag(&self, image: &LabeledImage) -> TagSet {
        let mut tags = TagSet::new();
        if image.raster.mean_luminance() >= 0.5 {
            tags.insert("bright");
        } else {
            tags.insert("dim");
        }
        tags.insert(color_name(image.raster.channel_means()));
        tags.insert("street");
        tags
    }
}

/// Looks up a tagger implementation by id.
pub fn tagger_by_id(id: &str) -> Result<Box<dyn Tagger>> {
    match id {
        "stub" => Ok(Box::new(StubTagger)),
        other => Err(Error::validation(format!("unknown tagger id '{other}'"))),
    }
}

/// Extracts tags from an image through the given tagger.
pub fn extract_tags(image: &LabeledImage, tagger: &dyn Tagger) -> TagSet {
    tagger.tag(image)
}

/// Union of source and domain tags: source order first, then unseen domain tags.
pub fn augment_tags(source: &TagSet, domain: &TagSet) -> TagSet {
    let mut out = source.clone();
    for t in domain.iter() {
        out.insert(t);
    }
    out
}

const STYLE_WORDS: &[&str] = &["cityscapes", "urban", "rural", "industrial", "suburban"];
const PLACE_WORDS: &[&str] = &[
    "street",
    "road",
    "highway",
    "intersection",
    "city",
    "town",
    "alley",
];
const LIGHTING_WORDS: &[&str] = &[
    "dark", "bright", "dim", "sunny", "foggy", "rainy", "snowy", "cloudy", "overcast", "clear",
    "wet",
];
const TIME_WORDS: &[&str] = &[
    "night", "daytime", "day", "dusk", "dawn", "morning", "evening", "noon",
];

/// Decodes a tag set into a sentence with the fixed template
/// `a {style} photo of a {lighting} {place} during {time}`.
///
/// Tags are routed into buckets by a fixed keyword map (multiple hits join
/// with spaces in insertion order); empty buckets are elided; tags that match
/// no bucket are appended as a trailing comma list. Every input tag appears
/// verbatim in the output.
pub fn decode_prompt(tags: &TagSet) -> Result<GlobalPrompt> {
    if tags.is_empty() {
        return Err(Error::validation("decode_prompt requires a non-empty tag set"));
    }
    let mut style = Vec::new();
    let mut place = Vec::new();
    let mut lighting = Vec::new();
    let mut time = Vec::new();
    let mut rest = Vec::new();
    for t in tags.iter() {
        if STYLE_WORDS.contains(&t) {
            style.push(t);
        } else if PLACE_WORDS.contains(&t) {
            place.push(t);
        } else if LIGHTING_WORDS.contains(&t) {
            lighting.push(t);
        } else if TIME_WORDS.contains(&t) {
            time.push(t);
        } else {
            rest.push(t);
        }
    }

    let mut text = String::from("a ");
    if !style.is_empty() {
        text.push_str(&style.join(" "));
        text.push(' ');
    }
    text.push_str("photo of a ");
    if !lighting.is_empty() {
        text.push_str(&lighting.join(" "));
        text.push(' ');
    }
    if place.is_empty() {
        text.push_str("scene");
    } else {
        text.push_str(&place.join(" "));
    }
    if !time.is_empty() {
        text.push_str(" during ");
        text.push_str(&time.join(" "));
    }
    if !rest.is_empty() {
        text.push_str(", ");
        text.push_str(&rest.join(", "));
    }

    Ok(GlobalPrompt {
        text,
        source_tags: tags.clone(),
    })
}

/// Samples an object-level prompt from the descriptor pools.
///
/// The object descriptor is drawn only from the subset registered as
/// consistent with `category`; the other four slots are drawn uniformly and
/// independently from their pools, all through a counter-based generator
/// keyed by `rng_seed`.
pub fn gen_instance_prompt(
    sets: &DescriptorSets,
    category: &str,
    rng_seed: u64,
) -> Result<InstancePrompt> {
    sets.validate()?;
    let allowed = sets
        .consistency
        .get(category)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| {
            Error::validation(format!(
                "no object descriptors registered as consistent with category '{category}'"
            ))
        })?;

    let mut rng = DetRng::new(rng_seed);
    let object = allowed[rng.next_index(allowed.len())].clone();
    let action = sets.actions[rng.next_index(sets.actions.len())].clone();
    let weather = sets.weather[rng.next_index(sets.weather.len())].clone();
    let scene = sets.scenes[rng.next_index(sets.scenes.len())].clone();
    let time = sets.times[rng.next_index(sets.times.len())].clone();
    let text = format!("A {object} is {action} in a {weather} {scene} during {time}.");
    Ok(InstancePrompt {
        text,
        object,
        action,
        weather,
        scene,
        time,
        category: category.to_string(),
    })
}
