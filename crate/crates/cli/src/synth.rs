//! Seeded generator of a small pseudo-German → English parallel corpus of
//! task-dialogue utterances.
//!
//! Utterances come from templates over six domains (pizza, movie tickets,
//! coffee, car repair, restaurant booking, rides). A template lists concept
//! keys in source order and in target order; each concept has one source
//! phrase and several weighted English paraphrases, so the source does not
//! determine the target. Slots (times, counts, names, ...) are filled
//! identically on both sides; names follow a Zipf law so held-out text
//! contains unseen ones.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter};
use std::path::Path;

use cnlm::text::{read_corpus, write_corpus};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stage_seed;

type Concept = (&'static str, &'static str, &'static [(&'static str, u32)]);

const CONCEPTS: &[Concept] = &[
    ("HELLO", "hallo", &[("hello", 5), ("hi", 3), ("good morning", 2)]),
    ("WANT", "ich möchte", &[("i would like to", 5), ("i want to", 3), ("i'd like to", 2)]),
    ("WANT_N", "ich hätte gern", &[("i would like", 5), ("i want", 3), ("i'll have", 2)]),
    ("CAN_YOU", "können sie", &[("can you", 5), ("could you", 4), ("would you", 1)]),
    ("CAN_I", "kann ich", &[("can i", 6), ("could i", 4)]),
    ("PLEASE", "bitte", &[("please", 8), ("if possible", 2)]),
    ("THANKS", "danke", &[("thank you", 5), ("thanks", 4), ("thanks a lot", 1)]),
    ("YES", "ja", &[("yes", 6), ("yeah", 2), ("sure", 2)]),
    ("NO", "nein", &[("no", 8), ("nope", 2)]),
    ("GREAT", "super", &[("great", 5), ("perfect", 3), ("sounds good", 2)]),
    ("AT_TIME", "um {T} uhr", &[("at {T}", 7), ("around {T}", 3)]),
    ("ON_DAY", "am {DAY}", &[("on {DAY}", 6), ("this {DAY}", 3), ("next {DAY}", 1)]),
    ("TONIGHT", "heute abend", &[("tonight", 6), ("this evening", 4)]),
    ("TOMORROW", "morgen", &[("tomorrow", 8)]),
    ("NAME", "unter dem namen {NAME}", &[("under the name {NAME}", 6), ("under {NAME}", 4)]),
    ("MY_NAME", "mein name ist {NAME}", &[("my name is {NAME}", 7), ("this is {NAME}", 3)]),
    ("HOW_LONG", "wie lange dauert es", &[("how long will it take", 5), ("how long does it take", 5)]),
    ("TOTAL", "das macht {PRICE} euro", &[("that is {PRICE} euros", 5), ("that will be {PRICE} euros", 5)]),
    ("ANYTHING_ELSE", "noch etwas", &[("anything else", 6), ("something else", 4)]),
    ("IS_THERE", "gibt es", &[("is there", 6), ("do you have", 4)]),
    ("ORDER", "bestellen", &[("order", 7), ("get", 3)]),
    ("HAVE", "haben", &[("have", 6), ("get", 4)]),
    // pizza
    ("PIZZA", "eine {SIZE} pizza", &[("a {SIZE} pizza", 8)]),
    ("WITH", "mit {TOPPING}", &[("with {TOPPING}", 8)]),
    ("AND_TOP", "und {TOPPING2}", &[("and {TOPPING2}", 8)]),
    ("DELIVER", "liefern", &[("deliver", 6), ("bring", 4)]),
    ("TO_ADDR", "in die {STREET}", &[("to {STREET}", 8)]),
    ("EXTRA_CHEESE", "extra käse", &[("extra cheese", 8)]),
    // movies
    ("TICKETS", "{N} karten", &[("{N} tickets", 8)]),
    ("FOR_MOVIE", "für {MOVIE}", &[("for {MOVIE}", 8)]),
    ("SHOWTIME", "wann läuft {MOVIE}", &[("when is {MOVIE} playing", 5), ("what time is {MOVIE} showing", 5)]),
    ("SEATS", "plätze in der mitte", &[("seats in the middle", 6), ("seats in the center", 4)]),
    ("BUY", "kaufen", &[("buy", 6), ("get", 4)]),
    ("LATER", "eine spätere vorstellung", &[("a later show", 5), ("a later showing", 5)]),
    // coffee
    ("COFFEE", "einen {SIZE} {DRINK}", &[("a {SIZE} {DRINK}", 8)]),
    ("WITH_MILK", "mit {MILK}", &[("with {MILK}", 8)]),
    ("NO_SUGAR", "ohne zucker", &[("without sugar", 6), ("no sugar", 4)]),
    ("TO_GO", "zum mitnehmen", &[("to go", 7), ("for takeaway", 3)]),
    // car repair
    ("APPT", "einen termin", &[("an appointment", 8)]),
    ("MAKE", "vereinbaren", &[("make", 5), ("schedule", 3), ("book", 2)]),
    ("FOR_CAR", "für meinen {CAR}", &[("for my {CAR}", 8)]),
    ("CAR_NOISE", "mein auto macht geräusche", &[("my car is making noises", 5), ("my car makes a strange noise", 5)]),
    ("OIL", "einen ölwechsel", &[("an oil change", 8)]),
    ("BRAKES", "die bremsen", &[("the brakes", 8)]),
    ("CHECK", "prüfen", &[("check", 6), ("look at", 4)]),
    // restaurant
    ("TABLE", "einen tisch", &[("a table", 8)]),
    ("FOR_N", "für {N} personen", &[("for {N} people", 6), ("for {N} persons", 2), ("for a party of {N}", 2)]),
    ("AT_REST", "im {REST}", &[("at {REST}", 7), ("in {REST}", 3)]),
    ("BOOK", "reservieren", &[("book", 5), ("reserve", 5)]),
    ("OUTSIDE", "draußen", &[("outside", 6), ("on the terrace", 4)]),
    ("SIT", "sitzen", &[("sit", 8)]),
    // rides
    ("TAXI", "ein taxi", &[("a taxi", 6), ("a cab", 4)]),
    ("TO_PLACE", "zum {DEST}", &[("to the {DEST}", 8)]),
    ("FROM_ADDR", "von der {STREET}", &[("from {STREET}", 8)]),
    ("ME", "mich", &[("me", 8)]),
    ("PICKUP", "abholen", &[("pick me up", 6), ("get me", 4)]),
];

/// `(source pattern, target pattern)`; target punctuation is literal.
type Template = (&'static str, &'static str);

const DOMAINS: &[&[Template]] = &[
    &[
        ("HELLO WANT PIZZA WITH ORDER", "HELLO , WANT ORDER PIZZA WITH ."),
        ("WANT_N PIZZA WITH AND_TOP", "WANT_N PIZZA WITH AND_TOP ."),
        ("CAN_YOU PIZZA TO_ADDR DELIVER", "CAN_YOU DELIVER PIZZA TO_ADDR ?"),
        ("WANT_N EXTRA_CHEESE PLEASE", "WANT_N EXTRA_CHEESE , PLEASE ."),
        ("TOTAL", "TOTAL ."),
    ],
    &[
        ("WANT TICKETS FOR_MOVIE ON_DAY BUY", "WANT BUY TICKETS FOR_MOVIE ON_DAY ."),
        ("SHOWTIME TONIGHT", "SHOWTIME TONIGHT ?"),
        ("WANT_N SEATS PLEASE", "WANT_N SEATS , PLEASE ."),
        ("IS_THERE LATER", "IS_THERE LATER ?"),
        ("TOTAL", "TOTAL ."),
    ],
    &[
        ("WANT_N COFFEE WITH_MILK PLEASE", "WANT_N COFFEE WITH_MILK , PLEASE ."),
        ("COFFEE NO_SUGAR TO_GO", "COFFEE NO_SUGAR TO_GO ."),
        ("CAN_I COFFEE HAVE", "CAN_I HAVE COFFEE ?"),
        ("TOTAL", "TOTAL ."),
    ],
    &[
        ("WANT APPT FOR_CAR ON_DAY MAKE", "WANT MAKE APPT FOR_CAR ON_DAY ."),
        ("CAR_NOISE", "CAR_NOISE ."),
        ("CAN_YOU BRAKES CHECK", "CAN_YOU CHECK BRAKES ?"),
        ("WANT_N OIL TOMORROW", "WANT_N OIL TOMORROW ."),
    ],
    &[
        ("HELLO WANT TABLE FOR_N AT_REST BOOK", "HELLO , WANT BOOK TABLE FOR_N AT_REST ."),
        ("CAN_YOU TABLE TONIGHT AT_TIME BOOK", "CAN_YOU BOOK TABLE TONIGHT AT_TIME ?"),
        ("NAME PLEASE", "NAME , PLEASE ."),
        ("CAN_I OUTSIDE SIT", "CAN_I SIT OUTSIDE ?"),
    ],
    &[
        ("WANT TAXI TO_PLACE ORDER", "WANT ORDER TAXI TO_PLACE ."),
        ("CAN_YOU ME FROM_ADDR PICKUP", "CAN_YOU PICKUP FROM_ADDR ?"),
        ("HOW_LONG", "HOW_LONG ?"),
        ("TAXI AT_TIME TOMORROW PLEASE", "TAXI TOMORROW AT_TIME , PLEASE ."),
    ],
];

const GENERIC: &[Template] = &[
    ("THANKS", "THANKS ."),
    ("YES GREAT", "YES , GREAT ."),
    ("MY_NAME", "MY_NAME ."),
    ("NO THANKS", "NO , THANKS ."),
    ("ANYTHING_ELSE", "ANYTHING_ELSE ?"),
];

/// Translated slot values: `(source, target)`.
const SIZES: &[(&str, &str)] = &[("kleine", "small"), ("mittlere", "medium"), ("große", "large")];
const TOPPINGS: &[(&str, &str)] = &[
    ("salami", "salami"),
    ("pilzen", "mushrooms"),
    ("schinken", "ham"),
    ("paprika", "peppers"),
    ("oliven", "olives"),
    ("zwiebeln", "onions"),
    ("ananas", "pineapple"),
    ("spinat", "spinach"),
    ("thunfisch", "tuna"),
    ("mais", "corn"),
];
const DRINKS: &[(&str, &str)] = &[
    ("latte", "latte"),
    ("cappuccino", "cappuccino"),
    ("espresso", "espresso"),
    ("americano", "americano"),
    ("mokka", "mocha"),
    ("tee", "tea"),
    ("kakao", "hot chocolate"),
];
const MILKS: &[(&str, &str)] = &[
    ("hafermilch", "oat milk"),
    ("sojamilch", "soy milk"),
    ("vollmilch", "whole milk"),
    ("mandelmilch", "almond milk"),
];
const DESTS: &[(&str, &str)] = &[
    ("bahnhof", "station"),
    ("flughafen", "airport"),
    ("hotel", "hotel"),
    ("stadion", "stadium"),
    ("zentrum", "center"),
    ("hafen", "harbor"),
    ("krankenhaus", "hospital"),
    ("museum", "museum"),
];
const DAYS: &[(&str, &str)] = &[
    ("montag", "Monday"),
    ("dienstag", "Tuesday"),
    ("mittwoch", "Wednesday"),
    ("donnerstag", "Thursday"),
    ("freitag", "Friday"),
    ("samstag", "Saturday"),
    ("sonntag", "Sunday"),
];
const PRICES: &[&str] = &["4,50", "5,40", "6,90", "7,80", "9,50", "12,40", "15,90", "18,50"];

/// Long-tail names, identical on both sides, drawn with Zipf weights.
const NAMES: &[&str] = &[
    "Anna", "Ben", "Clara", "David", "Emma", "Felix", "Greta", "Hannah", "Jonas", "Lena", "Lukas", "Mia",
    "Noah", "Paul", "Sophie", "Tom", "Marie", "Leon", "Julia", "Max", "Sarah", "Tim", "Laura", "Jan",
    "Nina", "Erik", "Ida", "Oskar", "Frieda", "Bruno", "Hugo", "Ella", "Karl", "Mila", "Theo", "Rosa",
    "Anton", "Luise", "Moritz", "Pia",
];
const STREETS: &[&str] = &[
    "Lindenstrasse", "Bergweg", "Hauptstrasse", "Gartenweg", "Schulstrasse", "Rosenweg", "Bahnhofstrasse",
    "Kirchweg", "Parkstrasse", "Waldweg", "Ringstrasse", "Mühlenweg", "Lessingstrasse", "Birkenweg",
    "Goethestrasse", "Ahornweg", "Schillerstrasse", "Eichenweg", "Marktstrasse", "Buchenweg",
    "Talstrasse", "Seeweg", "Amselweg", "Feldstrasse", "Uferweg", "Brunnenstrasse", "Heideweg",
    "Kastanienweg", "Sonnenstrasse", "Fichtenweg",
];
const MOVIES: &[&str] = &[
    "Nightfall", "Starbound", "Riverside", "Ironclad", "Moonlight", "Frostbite", "Skyfall", "Wildfire",
    "Undertow", "Daybreak", "Outpost", "Driftwood", "Blackout", "Evergreen", "Sandstorm", "Afterglow",
    "Crosswind", "Highland", "Lighthouse", "Stormfront", "Wavelength", "Firefly", "Overdrive", "Redwood",
];
const RESTAURANTS: &[&str] = &[
    "Adler", "Krone", "Olivo", "Sonne", "Lindenhof", "Bella", "Hirsch", "Roma", "Taverna", "Seeblick",
    "Ratskeller", "Zeitgeist", "Vapiano", "Bambus", "Löwen", "Sakura", "Rose", "Grünfink", "Bistro",
    "Anker", "Schwan", "Fuchs",
];
const CARS: &[&str] = &[
    "Volkswagen", "Audi", "BMW", "Opel", "Ford", "Toyota", "Skoda", "Renault", "Fiat", "Mazda", "Honda",
    "Kia", "Hyundai", "Peugeot", "Volvo", "Nissan", "Dacia", "Tesla",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 2000,
            dev: 200,
            test: 200,
            seed: 1,
        }
    }
}

/// Tokenized sentence pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelCorpus {
    pub source: Vec<Vec<String>>,
    pub target: Vec<Vec<String>>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn pairs(&self) -> Vec<(Vec<String>, Vec<String>)> {
        self.source.iter().cloned().zip(self.target.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticData {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

impl SyntheticData {
    pub fn split(&self, name: &str) -> Option<&ParallelCorpus> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Writes `{train,dev,test}.{src,tgt}`, one tokenized sentence per line.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for name in SPLITS {
            let split = self.split(name).expect("known split");
            for (ext, side) in [("src", &split.source), ("tgt", &split.target)] {
                let file = fs::File::create(dir.join(format!("{name}.{ext}")))?;
                write_corpus(BufWriter::new(file), side)?;
            }
        }
        Ok(())
    }

    pub fn read_from_dir(dir: &Path) -> io::Result<Self> {
        let read = |name: &str, ext: &str| -> io::Result<Vec<Vec<String>>> {
            let file = fs::File::open(dir.join(format!("{name}.{ext}")))?;
            read_corpus(io::BufReader::new(file))
        };
        let split = |name: &str| -> io::Result<ParallelCorpus> {
            Ok(ParallelCorpus {
                source: read(name, "src")?,
                target: read(name, "tgt")?,
            })
        };
        Ok(SyntheticData {
            train: split("train")?,
            dev: split("dev")?,
            test: split("test")?,
        })
    }
}

struct Generator {
    rng: ChaCha8Rng,
    concepts: HashMap<&'static str, (&'static str, &'static [(&'static str, u32)], WeightedIndex<u32>)>,
    zipf: HashMap<usize, WeightedIndex<f64>>,
}

impl Generator {
    fn new(seed: u64) -> Self {
        let concepts = CONCEPTS
            .iter()
            .map(|&(key, src, tgts)| {
                let dist = WeightedIndex::new(tgts.iter().map(|t| t.1)).expect("positive weights");
                (key, (src, tgts, dist))
            })
            .collect();
        Generator {
            rng: ChaCha8Rng::seed_from_u64(stage_seed(seed, "gen-synthetic")),
            concepts,
            zipf: HashMap::new(),
        }
    }

    fn zipf_pick(&mut self, list: &'static [&'static str]) -> &'static str {
        let dist = self
            .zipf
            .entry(list.len())
            .or_insert_with(|| WeightedIndex::new((1..=list.len()).map(|k| 1.0 / k as f64)).expect("weights"));
        list[dist.sample(&mut self.rng)]
    }

    fn slot(&mut self, kind: &str) -> (String, String) {
        let pair = |v: &(&str, &str)| (v.0.to_owned(), v.1.to_owned());
        let same = |v: &str| (v.to_owned(), v.to_owned());
        match kind {
            "N" => same(&self.rng.gen_range(2..=8).to_string()),
            "T" => {
                let h = self.rng.gen_range(6..=11);
                let m = if self.rng.gen_bool(0.5) { "00" } else { "30" };
                same(&format!("{h}:{m}"))
            }
            "PRICE" => same(PRICES.choose(&mut self.rng).unwrap()),
            "DAY" => pair(DAYS.choose(&mut self.rng).unwrap()),
            "SIZE" => pair(SIZES.choose(&mut self.rng).unwrap()),
            "TOPPING" => pair(TOPPINGS.choose(&mut self.rng).unwrap()),
            "DRINK" => pair(DRINKS.choose(&mut self.rng).unwrap()),
            "MILK" => pair(MILKS.choose(&mut self.rng).unwrap()),
            "DEST" => pair(DESTS.choose(&mut self.rng).unwrap()),
            "NAME" => same(self.zipf_pick(NAMES)),
            "STREET" => same(self.zipf_pick(STREETS)),
            "MOVIE" => same(self.zipf_pick(MOVIES)),
            "REST" => same(self.zipf_pick(RESTAURANTS)),
            "CAR" => same(self.zipf_pick(CARS)),
            _ => panic!("unknown slot {kind}"),
        }
    }

    fn fill(text: &str, slots: &HashMap<String, (String, String)>, target: bool, out: &mut Vec<String>) {
        for word in text.split_whitespace() {
            match word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                Some(name) => {
                    let (s, t) = &slots[name];
                    out.extend((if target { t } else { s }).split_whitespace().map(str::to_owned));
                }
                None => out.push(word.to_owned()),
            }
        }
    }

    fn slot_names(text: &str) -> impl Iterator<Item = &str> {
        text.split_whitespace()
            .filter_map(|w| w.strip_prefix('{').and_then(|w| w.strip_suffix('}')))
    }

    fn sentence(&mut self) -> (Vec<String>, Vec<String>) {
        let domain = DOMAINS.choose(&mut self.rng).unwrap();
        let (src_pat, tgt_pat) = if self.rng.gen_bool(0.2) {
            *GENERIC.choose(&mut self.rng).unwrap()
        } else {
            *domain.choose(&mut self.rng).unwrap()
        };

        let mut slots: HashMap<String, (String, String)> = HashMap::new();
        let mut source = Vec::new();
        for key in src_pat.split_whitespace() {
            let (src, _, _) = self.concepts[key];
            for name in Self::slot_names(src) {
                if !slots.contains_key(name) {
                    let value = self.slot(name.trim_end_matches(char::is_numeric));
                    slots.insert(name.to_owned(), value);
                }
            }
            Self::fill(src, &slots, false, &mut source);
        }
        let mut target = Vec::new();
        for key in tgt_pat.split_whitespace() {
            match self.concepts.get(key) {
                Some((_, tgts, dist)) => {
                    let text = tgts[dist.sample(&mut self.rng)].0;
                    Self::fill(text, &slots, true, &mut target);
                }
                None => target.push(key.to_owned()),
            }
        }
        for t in &mut target {
            if t == "i" || t.starts_with("i'") {
                *t = t.replacen('i', "I", 1);
            }
        }
        if let Some(first) = target.first_mut() {
            let mut chars = first.chars();
            if let Some(c) = chars.next() {
                *first = c.to_uppercase().chain(chars).collect();
            }
        }
        (source, target)
    }

    fn corpus(&mut self, n: usize) -> ParallelCorpus {
        let mut c = ParallelCorpus::default();
        for _ in 0..n {
            let (s, t) = self.sentence();
            c.source.push(s);
            c.target.push(t);
        }
        c
    }
}

/// Generates train, dev and test splits; deterministic per seed.
pub fn generate(cfg: &SynthConfig) -> SyntheticData {
    let mut g = Generator::new(cfg.seed);
    SyntheticData {
        train: g.corpus(cfg.train),
        dev: g.corpus(cfg.dev),
        test: g.corpus(cfg.test),
    }
}
