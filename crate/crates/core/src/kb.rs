//! Synthetic movie-ticket knowledge base, constraint queries, and the user
//! goal space derived from it.

use crate::domain::UserGoal;
use crate::schema::Slot;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

const MOVIES: &[&str] = &[
    "creed",
    "zootopia",
    "deadpool",
    "the revenant",
    "kung fu panda 3",
    "london has fallen",
    "the witch",
    "risen",
    "star wars",
    "10 cloverfield lane",
    "the jungle book",
    "eddie the eagle",
    "whiskey tango foxtrot",
    "the big short",
];

const THEATERS: &[(&str, &str)] = &[
    ("century eastport 16", "century"),
    ("amc pacific place 11", "amc"),
    ("regal meridian 16", "regal"),
    ("carmike 12", "carmike"),
    ("cinemark tinseltown 9", "cinemark"),
    ("amc lowes oak tree 6", "amc"),
    ("regal thornton place", "regal"),
    ("century rowland plaza", "century"),
    ("amc southcenter 16", "amc"),
    ("cinemark century 20", "cinemark"),
];

const CITIES: &[&str] = &[
    "regency",
    "seattle",
    "bellevue",
    "portland",
    "birmingham",
    "los angeles",
    "houston",
    "san francisco",
];

const DATES: &[&str] = &["today", "tomorrow", "saturday", "sunday", "friday"];
const START_TIMES: &[&str] = &["around noon", "4:30pm", "7pm", "9:30pm", "10am"];
const PRICES: &[&str] = &["$10", "$12", "$15"];
const VIDEO_FORMATS: &[&str] = &["standard", "3d", "imax"];
const PARTY_SIZES: &[&str] = &["two", "three", "four", "five", "six", "one"];
const DISTANCES: &[&str] = &["near me", "downtown", "east side", "north side"];

/// Slots a generated goal may constrain. `moviename` is always present.
pub const GOAL_CONSTRAINT_SLOTS: &[Slot] = &[
    Slot::MovieName,
    Slot::NumberOfPeople,
    Slot::City,
    Slot::Date,
    Slot::StartTime,
    Slot::Theater,
    Slot::VideoFormat,
];

/// Optional request slots a generated goal may carry besides `ticket`.
pub const GOAL_REQUEST_SLOTS: &[Slot] = &[Slot::Theater, Slot::StartTime, Slot::Price];

/// One showing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KbRow {
    pub city: String,
    pub theater: String,
    pub theater_chain: String,
    pub moviename: String,
    pub date: String,
    pub starttime: String,
    pub price: String,
    pub video_format: String,
    pub zip: String,
    pub distanceconstraints: String,
    pub numberofpeople: String,
}

impl KbRow {
    /// Value of a knowledge-base attribute, `None` for non-attribute slots.
    pub fn get(&self, slot: Slot) -> Option<&str> {
        let value = match slot {
            Slot::City => &self.city,
            Slot::Theater => &self.theater,
            Slot::TheaterChain => &self.theater_chain,
            Slot::MovieName => &self.moviename,
            Slot::Date => &self.date,
            Slot::StartTime => &self.starttime,
            Slot::Price => &self.price,
            Slot::VideoFormat => &self.video_format,
            Slot::Zip => &self.zip,
            Slot::DistanceConstraints => &self.distanceconstraints,
            Slot::NumberOfPeople => &self.numberofpeople,
            _ => return None,
        };
        Some(value)
    }

    /// All attribute/value pairs in slot order.
    pub fn attributes(&self) -> impl Iterator<Item = (Slot, &str)> + '_ {
        Slot::ALL
            .iter()
            .filter_map(move |&slot| self.get(slot).map(|v| (slot, v)))
    }

    pub fn matches(&self, constraints: &BTreeMap<Slot, String>) -> bool {
        constraints
            .iter()
            .all(|(slot, value)| self.get(*slot).is_some_and(|v| v.eq_ignore_ascii_case(value)))
    }
}

/// An immutable knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeBase {
    rows: Vec<KbRow>,
}

impl KnowledgeBase {
    pub fn from_rows(rows: Vec<KbRow>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[KbRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows matching every constraint (case-insensitive exact match).
    pub fn query(&self, constraints: &BTreeMap<Slot, String>) -> Result<Vec<&KbRow>> {
        check_slots(constraints)?;
        Ok(self.rows.iter().filter(|r| r.matches(constraints)).collect())
    }

    pub fn count(&self, constraints: &BTreeMap<Slot, String>) -> Result<usize> {
        check_slots(constraints)?;
        Ok(self.rows.iter().filter(|r| r.matches(constraints)).count())
    }

    /// First matching row, ignoring constraints on non-attribute slots.
    pub fn top_match(&self, constraints: &BTreeMap<Slot, String>) -> Option<&KbRow> {
        self.rows.iter().find(|r| {
            constraints
                .iter()
                .filter(|(s, _)| s.is_informable())
                .all(|(s, v)| r.get(*s).is_some_and(|x| x.eq_ignore_ascii_case(v)))
        })
    }

    /// Match count ignoring constraints on non-attribute slots.
    pub fn count_lenient(&self, constraints: &BTreeMap<Slot, String>) -> usize {
        let filtered: BTreeMap<Slot, String> = constraints
            .iter()
            .filter(|(s, _)| s.is_informable())
            .map(|(s, v)| (*s, v.clone()))
            .collect();
        self.rows.iter().filter(|r| r.matches(&filtered)).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_slots(constraints: &BTreeMap<Slot, String>) -> Result<()> {
    match constraints.keys().find(|s| !s.is_informable()) {
        Some(slot) => Err(Error::UnknownSlot(slot.to_string())),
        None => Ok(()),
    }
}

fn pick_names(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize, stem: &str) -> Vec<String> {
    // The head of each vocabulary is always present; the rest vary by seed.
    let mut names: Vec<String> = vocab.iter().map(|s| s.to_string()).collect();
    names[1..].shuffle(rng);
    names.truncate(n);
    let extra = n.saturating_sub(names.len());
    names.extend((0..extra).map(|i| format!("{stem} {}", vocab.len() + i + 1)));
    names
}

/// Generates a knowledge base in which every movie shows at every theater on
/// every date and start time. Theaters are spread over cities round-robin.
pub fn generate_kb(seed: u64, n_movies: usize, n_theaters: usize, n_cities: usize) -> Result<KnowledgeBase> {
    if n_movies == 0 || n_theaters == 0 || n_cities == 0 {
        return Err(Error::InvalidArgument(
            "movie, theater and city counts must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let movies = pick_names(&mut rng, MOVIES, n_movies, "movie");
    let cities = pick_names(&mut rng, CITIES, n_cities, "city");

    let mut theater_pool: Vec<(String, String)> = THEATERS
        .iter()
        .map(|(t, c)| (t.to_string(), c.to_string()))
        .collect();
    theater_pool[1..].shuffle(&mut rng);
    theater_pool.truncate(n_theaters);
    let extra = n_theaters.saturating_sub(theater_pool.len());
    theater_pool.extend((0..extra).map(|i| {
        let n = THEATERS.len() + i + 1;
        (format!("cinema {n}"), "independent".to_string())
    }));

    struct Venue {
        name: String,
        chain: String,
        city: String,
        zip: String,
        distance: String,
    }
    let venues: Vec<Venue> = theater_pool
        .into_iter()
        .enumerate()
        .map(|(i, (name, chain))| Venue {
            name,
            chain,
            city: cities[i % cities.len()].clone(),
            zip: format!("98{:03}", rng.random_range(0..1000)),
            distance: DISTANCES[rng.random_range(0..DISTANCES.len())].to_string(),
        })
        .collect();

    let mut rows = Vec::with_capacity(movies.len() * venues.len() * DATES.len() * START_TIMES.len());
    for movie in &movies {
        for venue in &venues {
            let format = VIDEO_FORMATS[rng.random_range(0..VIDEO_FORMATS.len())];
            for date in DATES {
                for time in START_TIMES {
                    rows.push(KbRow {
                        city: venue.city.clone(),
                        theater: venue.name.clone(),
                        theater_chain: venue.chain.clone(),
                        moviename: movie.clone(),
                        date: date.to_string(),
                        starttime: time.to_string(),
                        price: PRICES[rng.random_range(0..PRICES.len())].to_string(),
                        video_format: format.to_string(),
                        zip: venue.zip.clone(),
                        distanceconstraints: venue.distance.clone(),
                        numberofpeople: PARTY_SIZES[rng.random_range(0..PARTY_SIZES.len())].to_string(),
                    });
                }
            }
        }
    }
    Ok(KnowledgeBase { rows })
}

/// The knowledge base used by default for experiments.
pub fn default_kb() -> KnowledgeBase {
    generate_kb(1, 6, 5, 3).expect("default knowledge-base parameters are valid")
}

/// Draws up to `max_goals` distinct goals. Each goal projects a random row
/// onto `moviename` plus a random subset of the other constraint slots, so
/// every goal is satisfiable by construction.
pub fn enumerate_goals(kb: &KnowledgeBase, seed: u64, max_goals: usize) -> Vec<UserGoal> {
    if kb.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut goals = Vec::new();
    let attempts = max_goals.saturating_mul(4);
    for _ in 0..attempts {
        if goals.len() >= max_goals {
            break;
        }
        let row = &kb.rows[rng.random_range(0..kb.len())];
        let mut constraints = BTreeMap::new();
        for &slot in GOAL_CONSTRAINT_SLOTS {
            if slot == Slot::MovieName || rng.random_bool(0.5) {
                let value = row.get(slot).expect("goal slots are attributes");
                constraints.insert(slot, value.to_string());
            }
        }
        let mut requests = BTreeSet::from([Slot::Ticket]);
        for &slot in GOAL_REQUEST_SLOTS {
            if !constraints.contains_key(&slot) && rng.random_bool(0.3) {
                requests.insert(slot);
            }
        }
        let goal = UserGoal { constraints, requests };
        if seen.insert(goal.clone()) {
            goals.push(goal);
        }
    }
    goals
}

/// Slot signature shared by every goal of a category.
pub type GoalSignature = (Vec<Slot>, Vec<Slot>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalCategory {
    pub id: usize,
    pub signature: GoalSignature,
    pub goals: Vec<UserGoal>,
}

/// Groups goals by (constraint slots, request slots). When there are more
/// than `l_max` signatures, only the `l_max` most populous are kept; ties
/// fall back to signature order.
pub fn categorize_goals(goals: &[UserGoal], l_max: usize) -> Vec<GoalCategory> {
    let mut groups: HashMap<GoalSignature, Vec<UserGoal>> = HashMap::new();
    for goal in goals {
        groups.entry(goal.signature()).or_default().push(goal.clone());
    }
    let mut groups: Vec<(GoalSignature, Vec<UserGoal>)> = groups.into_iter().collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    groups.truncate(l_max);
    groups
        .into_iter()
        .enumerate()
        .map(|(id, (signature, goals))| GoalCategory { id, signature, goals })
        .collect()
}

pub fn save_goals(goals: &[UserGoal], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(goals)?)?;
    Ok(())
}

pub fn load_goals(path: &Path) -> Result<Vec<UserGoal>> {
    let goals: Vec<UserGoal> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for goal in &goals {
        goal.validate()?;
    }
    Ok(goals)
}
