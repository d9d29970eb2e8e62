//! Lotteries, lottery pairs, recorded two-alternative choices and the
//! empirical frequencies derived from them.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Default absolute bound on monetary outcomes (the reference experiment
/// uses outcomes in [-100, 100]).
pub const DEFAULT_OUTCOME_BOUND: f64 = 100.0;

/// Two-outcome lottery: `outcome1` with `prob1`, otherwise `outcome2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub outcome1: f64,
    pub prob1: f64,
    pub outcome2: f64,
    pub prob2: f64,
}

impl Lottery {
    pub fn new(outcome1: f64, prob1: f64, outcome2: f64, prob2: f64) -> Result<Self> {
        if !outcome1.is_finite() || !outcome2.is_finite() {
            return Err(domain("lottery outcomes must be finite"));
        }
        for p in [prob1, prob2] {
            if !(0.0..=1.0).contains(&p) {
                return Err(domain(format!("lottery probability {p} outside [0, 1]")));
            }
        }
        let sum = prob1 + prob2;
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::ProbabilitySum { prob1, prob2, sum });
        }
        Ok(Self {
            outcome1,
            prob1,
            outcome2,
            prob2,
        })
    }

    /// Lottery with the second probability implied as `1 - prob1`.
    pub fn with_complement(outcome1: f64, prob1: f64, outcome2: f64) -> Result<Self> {
        Self::new(outcome1, prob1, outcome2, 1.0 - prob1)
    }

    /// Sure outcome `(v; 1)`.
    pub fn degenerate(v: f64) -> Self {
        Self {
            outcome1: v,
            prob1: 1.0,
            outcome2: v,
            prob2: 0.0,
        }
    }

    pub fn expected_value(&self) -> f64 {
        self.outcome1 * self.prob1 + self.outcome2 * self.prob2
    }

    pub fn outcomes(&self) -> [f64; 2] {
        [self.outcome1, self.outcome2]
    }

    fn check_bound(&self, bound: f64) -> Result<()> {
        for v in self.outcomes() {
            if v.abs() > bound {
                return Err(domain(format!("outcome {v} outside [-{bound}, {bound}]")));
            }
        }
        Ok(())
    }
}

/// Lottery-pair type, derived from the signs of the four outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LotteryKind {
    PureGain,
    PureLoss,
    Mixed,
    MixedZero,
}

impl LotteryKind {
    pub const ALL: [LotteryKind; 4] = [
        LotteryKind::PureGain,
        LotteryKind::PureLoss,
        LotteryKind::Mixed,
        LotteryKind::MixedZero,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LotteryKind::PureGain => "pure_gain",
            LotteryKind::PureLoss => "pure_loss",
            LotteryKind::Mixed => "mixed",
            LotteryKind::MixedZero => "mixed_zero",
        }
    }
}

/// Classify a pair by outcome signs. Zero counts as neither gain nor loss:
/// all positive is a pure gain, all negative a pure loss, a zero next to at
/// least one gain and one loss is mixed-zero, anything else is mixed.
pub fn classify_kind(a: &Lottery, b: &Lottery) -> LotteryKind {
    let outcomes = [a.outcome1, a.outcome2, b.outcome1, b.outcome2];
    let gains = outcomes.iter().filter(|v| **v > 0.0).count();
    let losses = outcomes.iter().filter(|v| **v < 0.0).count();
    let zeros = 4 - gains - losses;
    if gains == 4 {
        LotteryKind::PureGain
    } else if losses == 4 {
        LotteryKind::PureLoss
    } else if zeros > 0 && gains > 0 && losses > 0 {
        LotteryKind::MixedZero
    } else {
        LotteryKind::Mixed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryPair {
    pub id: String,
    pub a: Lottery,
    pub b: Lottery,
    pub kind: LotteryKind,
}

impl LotteryPair {
    pub fn new(id: impl Into<String>, a: Lottery, b: Lottery) -> Self {
        let kind = classify_kind(&a, &b);
        Self {
            id: id.into(),
            a,
            b,
            kind,
        }
    }

    /// Same pair with the roles of A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            a: self.b,
            b: self.a,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Session {
    Time1,
    Time2,
}

impl Session {
    pub const BOTH: [Session; 2] = [Session::Time1, Session::Time2];

    pub fn number(self) -> u8 {
        match self {
            Session::Time1 => 1,
            Session::Time2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Session::Time1),
            2 => Ok(Session::Time2),
            _ => Err(domain(format!("session must be 1 or 2, got {n}"))),
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn flipped(self) -> Self {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub subject: String,
    pub pair: String,
    pub session: Session,
    pub choice: Choice,
}

/// Per-subject share of choices agreeing with the population majority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMajority {
    pub subject: String,
    pub time1: Option<f64>,
    pub time2: Option<f64>,
}

/// Missing-answer report; incomplete data is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completeness {
    pub expected_per_session: usize,
    pub answered_time1: usize,
    pub answered_time2: usize,
    pub subjects_missing_a_session: usize,
}

/// Validated, immutable collection of pairs, subjects and choices.
#[derive(Debug, Clone)]
pub struct ChoiceDataset {
    pairs: Vec<LotteryPair>,
    subjects: Vec<String>,
    pair_index: HashMap<String, usize>,
    subject_index: HashMap<String, usize>,
    // [subject * n_pairs + pair][session]
    grid: Vec<[Option<Choice>; 2]>,
}

impl ChoiceDataset {
    /// Build a dataset; the subject set is taken from the observations.
    pub fn new(pairs: Vec<LotteryPair>, observations: &[ChoiceObservation]) -> Result<Self> {
        let subjects: BTreeSet<&str> = observations.iter().map(|o| o.subject.as_str()).collect();
        let subjects: Vec<String> = subjects.into_iter().map(str::to_owned).collect();
        Self::with_subjects(pairs, subjects, observations)
    }

    /// Build a dataset with an explicit subject list (subjects may have no
    /// observations).
    pub fn with_subjects(
        pairs: Vec<LotteryPair>,
        mut subjects: Vec<String>,
        observations: &[ChoiceObservation],
    ) -> Result<Self> {
        let mut pair_index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if pair_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicatePair(p.id.clone()));
            }
            let kind = classify_kind(&p.a, &p.b);
            if kind != p.kind {
                return Err(domain(format!(
                    "pair {} stored kind {:?} does not match derived kind {:?}",
                    p.id, p.kind, kind
                )));
            }
        }
        subjects.sort();
        subjects.dedup();
        let subject_index: HashMap<String, usize> = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let n_pairs = pairs.len();
        let mut grid = vec![[None; 2]; subjects.len() * n_pairs];
        for o in observations {
            let s = *subject_index
                .get(&o.subject)
                .ok_or_else(|| Error::UnknownSubject(o.subject.clone()))?;
            let p = *pair_index
                .get(&o.pair)
                .ok_or_else(|| Error::UnknownPair(o.pair.clone()))?;
            let cell = &mut grid[s * n_pairs + p][o.session.slot()];
            if cell.is_some() {
                return Err(Error::DuplicateObservation {
                    subject: o.subject.clone(),
                    pair: o.pair.clone(),
                    session: o.session.number(),
                });
            }
            *cell = Some(o.choice);
        }
        Ok(Self {
            pairs,
            subjects,
            pair_index,
            subject_index,
            grid,
        })
    }

    pub fn pairs(&self) -> &[LotteryPair] {
        &self.pairs
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn pair_index(&self, id: &str) -> Result<usize> {
        self.pair_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownPair(id.to_owned()))
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.subject_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSubject(id.to_owned()))
    }

    /// Choice of subject `s` on pair `p` (both by index).
    pub fn choice(&self, s: usize, p: usize, session: Session) -> Option<Choice> {
        self.grid[s * self.pairs.len() + p][session.slot()]
    }

    /// All observations, ordered by subject, pair, session.
    pub fn observations(&self) -> Vec<ChoiceObservation> {
        let mut out = Vec::new();
        for (s, subject) in self.subjects.iter().enumerate() {
            for (p, pair) in self.pairs.iter().enumerate() {
                for session in Session::BOTH {
                    if let Some(choice) = self.choice(s, p, session) {
                        out.push(ChoiceObservation {
                            subject: subject.clone(),
                            pair: pair.id.clone(),
                            session,
                            choice,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn has_session(&self, session: Session) -> bool {
        self.grid.iter().any(|cell| cell[session.slot()].is_some())
    }

    /// `(count A, count B)` for a pair and session, over subjects selected by
    /// `include` (all subjects when `None`).
    pub fn counts(&self, p: usize, session: Session, include: Option<&[bool]>) -> (u64, u64) {
        let mut a = 0;
        let mut b = 0;
        for s in 0..self.subjects.len() {
            if include.is_some_and(|m| !m[s]) {
                continue;
            }
            match self.choice(s, p, session) {
                Some(Choice::A) => a += 1,
                Some(Choice::B) => b += 1,
                None => {}
            }
        }
        (a, b)
    }

    /// Fraction of responding subjects who chose B.
    pub fn choice_frequency(&self, pair_id: &str, session: Session) -> Result<f64> {
        self.choice_frequency_at(self.pair_index(pair_id)?, session)
    }

    pub fn choice_frequency_at(&self, p: usize, session: Session) -> Result<f64> {
        let (a, b) = self.counts(p, session, None);
        if a + b == 0 {
            return Err(Error::NoObservations(format!(
                "pair {} session {}",
                self.pairs[p].id,
                session.number()
            )));
        }
        Ok(b as f64 / (a + b) as f64)
    }

    /// Frequency of the most common choice; always in [0.5, 1].
    pub fn majority_frequency(&self, pair_id: &str, session: Session) -> Result<f64> {
        self.majority_frequency_at(self.pair_index(pair_id)?, session)
    }

    pub fn majority_frequency_at(&self, p: usize, session: Session) -> Result<f64> {
        let (a, b) = self.counts(p, session, None);
        if a + b == 0 {
            return Err(Error::NoObservations(format!(
                "pair {} session {}",
                self.pairs[p].id,
                session.number()
            )));
        }
        Ok(a.max(b) as f64 / (a + b) as f64)
    }

    /// Majority choice; a tie resolves to B.
    pub fn majority_choice_at(&self, p: usize, session: Session) -> Option<Choice> {
        let (a, b) = self.counts(p, session, None);
        if a + b == 0 {
            None
        } else if a > b {
            Some(Choice::A)
        } else {
            Some(Choice::B)
        }
    }

    /// Whether the majority at `(p, session)` is an exact tie.
    pub fn majority_is_tie(&self, p: usize, session: Session) -> bool {
        let (a, b) = self.counts(p, session, None);
        a + b > 0 && a == b
    }

    /// Fraction of subjects observed in both sessions whose choice changed.
    pub fn shift_frequency(&self, pair_id: &str) -> Result<f64> {
        self.shift_frequency_at(self.pair_index(pair_id)?)
    }

    pub fn shift_frequency_at(&self, p: usize) -> Result<f64> {
        let mut both = 0u64;
        let mut shifted = 0u64;
        for s in 0..self.subjects.len() {
            if let (Some(c1), Some(c2)) =
                (self.choice(s, p, Session::Time1), self.choice(s, p, Session::Time2))
            {
                both += 1;
                if c1 != c2 {
                    shifted += 1;
                }
            }
        }
        if both == 0 {
            return Err(Error::NoObservations(format!(
                "no subject answered pair {} in both sessions",
                self.pairs[p].id
            )));
        }
        Ok(shifted as f64 / both as f64)
    }

    /// Number of subjects observed in both sessions on pair `p`.
    pub fn doubly_observed(&self, p: usize) -> usize {
        (0..self.subjects.len())
            .filter(|&s| {
                self.choice(s, p, Session::Time1).is_some()
                    && self.choice(s, p, Session::Time2).is_some()
            })
            .count()
    }

    /// For each subject and session, the share of answered pairs where the
    /// subject's choice equals the population majority of that session.
    pub fn subject_majority_stats(&self) -> Vec<SubjectMajority> {
        let majorities: Vec<[Option<Choice>; 2]> = (0..self.pairs.len())
            .map(|p| {
                [
                    self.majority_choice_at(p, Session::Time1),
                    self.majority_choice_at(p, Session::Time2),
                ]
            })
            .collect();
        self.subjects
            .iter()
            .enumerate()
            .map(|(s, subject)| {
                let frac = |session: Session| {
                    let mut answered = 0u64;
                    let mut agree = 0u64;
                    for (p, maj) in majorities.iter().enumerate() {
                        if let (Some(c), Some(m)) = (self.choice(s, p, session), maj[session.slot()]) {
                            answered += 1;
                            if c == m {
                                agree += 1;
                            }
                        }
                    }
                    (answered > 0).then(|| agree as f64 / answered as f64)
                };
                SubjectMajority {
                    subject: subject.clone(),
                    time1: frac(Session::Time1),
                    time2: frac(Session::Time2),
                }
            })
            .collect()
    }

    pub fn completeness(&self) -> Completeness {
        let n_pairs = self.pairs.len();
        let mut answered = [0usize; 2];
        let mut missing = 0;
        for s in 0..self.subjects.len() {
            let mut per = [0usize; 2];
            for p in 0..n_pairs {
                for session in Session::BOTH {
                    if self.choice(s, p, session).is_some() {
                        per[session.slot()] += 1;
                    }
                }
            }
            answered[0] += per[0];
            answered[1] += per[1];
            if (per[0] == 0) != (per[1] == 0) {
                missing += 1;
            }
        }
        Completeness {
            expected_per_session: n_pairs * self.subjects.len(),
            answered_time1: answered[0],
            answered_time2: answered[1],
            subjects_missing_a_session: missing,
        }
    }

    /// Dataset restricted to the given subjects.
    pub fn filter_subjects(&self, keep: &BTreeSet<String>) -> Result<Self> {
        let obs: Vec<ChoiceObservation> = self
            .observations()
            .into_iter()
            .filter(|o| keep.contains(&o.subject))
            .collect();
        let subjects: Vec<String> = self
            .subjects
            .iter()
            .filter(|s| keep.contains(*s))
            .cloned()
            .collect();
        Self::with_subjects(self.pairs.clone(), subjects, &obs)
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Options for CSV loading.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Largest admissible |outcome|; `None` disables the check.
    pub outcome_bound: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            outcome_bound: Some(DEFAULT_OUTCOME_BOUND),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_f64(path: &Path, line: usize, field: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{field}: expected a finite number, got {text:?}"),
        })
}

fn parse_prob(path: &Path, line: usize, field: &str, text: &str) -> Result<f64> {
    if let Some((_, frac)) = text.split_once('.') {
        if frac.len() > 6 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("{field}: more than 6 fractional digits in {text:?}"),
            });
        }
    }
    parse_f64(path, line, field, text)
}

fn with_line(path: &Path, line: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } | Error::Io { .. } => e,
        other => Error::Parse {
            path: path.display().to_string(),
            line,
            message: other.to_string(),
        },
    }
}

fn header_position(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: format!("missing column {name:?}"),
    })
}

/// Read pairs from `pair_id,vA1,pA1,vA2,vB1,pB1,vB2` (optional `pA2`, `pB2`
/// columns are validated against the implied complements).
pub fn load_pairs(path: &Path, opts: LoadOptions) -> Result<Vec<LotteryPair>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols: Vec<usize> = ["pair_id", "vA1", "pA1", "vA2", "vB1", "pB1", "vB2"]
        .iter()
        .map(|c| header_position(path, &headers, c))
        .collect::<Result<_>>()?;
    let pa2 = headers.iter().position(|h| h == "pA2");
    let pb2 = headers.iter().position(|h| h == "pB2");
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| rec.get(cols[i]).unwrap_or("");
        let id = field(0).to_owned();
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                message: "empty pair_id".into(),
            });
        }
        let va1 = parse_f64(path, line, "vA1", field(1))?;
        let pa1 = parse_prob(path, line, "pA1", field(2))?;
        let va2 = parse_f64(path, line, "vA2", field(3))?;
        let vb1 = parse_f64(path, line, "vB1", field(4))?;
        let pb1 = parse_prob(path, line, "pB1", field(5))?;
        let vb2 = parse_f64(path, line, "vB2", field(6))?;
        let second = |col: Option<usize>, name: &str, p1: f64| -> Result<f64> {
            match col.and_then(|c| rec.get(c)).filter(|t| !t.is_empty()) {
                Some(t) => parse_prob(path, line, name, t),
                None => Ok(1.0 - p1),
            }
        };
        let a = Lottery::new(va1, pa1, va2, second(pa2, "pA2", pa1)?)
            .map_err(|e| with_line(path, line, e))?;
        let b = Lottery::new(vb1, pb1, vb2, second(pb2, "pB2", pb1)?)
            .map_err(|e| with_line(path, line, e))?;
        if let Some(bound) = opts.outcome_bound {
            a.check_bound(bound)
                .and_then(|_| b.check_bound(bound))
                .map_err(|e| with_line(path, line, e))?;
        }
        if !seen.insert(id.clone()) {
            return Err(with_line(path, line, Error::DuplicatePair(id)));
        }
        pairs.push(LotteryPair::new(id, a, b));
    }
    Ok(pairs)
}

/// Read observations from `subject_id,pair_id,session,choice`.
pub fn load_observations(path: &Path) -> Result<Vec<ChoiceObservation>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols: Vec<usize> = ["subject_id", "pair_id", "session", "choice"]
        .iter()
        .map(|c| header_position(path, &headers, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| rec.get(cols[i]).unwrap_or("");
        let parse_error = |message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let subject = field(0).to_owned();
        let pair = field(1).to_owned();
        if subject.is_empty() || pair.is_empty() {
            return Err(parse_error("empty subject_id or pair_id".into()));
        }
        let session = match field(2) {
            "1" => Session::Time1,
            "2" => Session::Time2,
            other => return Err(parse_error(format!("session must be 1 or 2, got {other:?}"))),
        };
        let choice = match field(3) {
            "A" => Choice::A,
            "B" => Choice::B,
            other => return Err(parse_error(format!("choice must be A or B, got {other:?}"))),
        };
        if !seen.insert((subject.clone(), pair.clone(), session)) {
            return Err(with_line(
                path,
                line,
                Error::DuplicateObservation {
                    subject,
                    pair,
                    session: session.number(),
                },
            ));
        }
        out.push(ChoiceObservation {
            subject,
            pair,
            session,
            choice,
        });
    }
    Ok(out)
}

/// Load and validate a dataset from its pairs and observations files.
pub fn load_dataset(pairs_path: &Path, observations_path: &Path, opts: LoadOptions) -> Result<ChoiceDataset> {
    let pairs = load_pairs(pairs_path, opts)?;
    let obs = load_observations(observations_path)?;
    ChoiceDataset::new(pairs, &obs)
}

fn fmt_num(v: f64) -> String {
    // shortest round-trip representation
    format!("{v}")
}

pub fn write_pairs<W: std::io::Write>(pairs: &[LotteryPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| domain(format!("csv write: {e}"));
    w.write_record(["pair_id", "vA1", "pA1", "vA2", "vB1", "pB1", "vB2"])
        .map_err(map)?;
    for p in pairs {
        w.write_record([
            p.id.clone(),
            fmt_num(p.a.outcome1),
            fmt_num(p.a.prob1),
            fmt_num(p.a.outcome2),
            fmt_num(p.b.outcome1),
            fmt_num(p.b.prob1),
            fmt_num(p.b.outcome2),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| domain(format!("csv write: {e}")))?;
    Ok(())
}

pub fn write_observations<W: std::io::Write>(dataset: &ChoiceDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| domain(format!("csv write: {e}"));
    w.write_record(["subject_id", "pair_id", "session", "choice"])
        .map_err(map)?;
    for o in dataset.observations() {
        let choice = match o.choice {
            Choice::A => "A",
            Choice::B => "B",
        };
        w.write_record([
            o.subject.as_str(),
            o.pair.as_str(),
            &o.session.number().to_string(),
            choice,
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| domain(format!("csv write: {e}")))?;
    Ok(())
}

/// Write `pairs.csv`-style and `observations.csv`-style files.
pub fn save_dataset(dataset: &ChoiceDataset, pairs_path: &Path, observations_path: &Path) -> Result<()> {
    let f = std::fs::File::create(pairs_path).map_err(|e| io_err(pairs_path, e))?;
    write_pairs(dataset.pairs(), std::io::BufWriter::new(f))?;
    let f = std::fs::File::create(observations_path).map_err(|e| io_err(observations_path, e))?;
    write_observations(dataset, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn lot(v1: f64, p1: f64, v2: f64) -> Lottery {
        Lottery::with_complement(v1, p1, v2).unwrap()
    }

    fn obs(s: &str, p: &str, session: Session, choice: Choice) -> ChoiceObservation {
        ChoiceObservation {
            subject: s.into(),
            pair: p.into(),
            session,
            choice,
        }
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn loads_minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write_file(&dir, "pairs.csv", "pair_id,vA1,pA1,vA2,vB1,pB1,vB2\np1,10,0.5,-10,5,1.0,5\n");
        let obs = write_file(
            &dir,
            "obs.csv",
            "# seed=3\nsubject_id,pair_id,session,choice\ns1,p1,1,A\n# note\ns1,p1,2,B\n",
        );
        let ds = load_dataset(&pairs, &obs, LoadOptions::default()).unwrap();
        assert_eq!(ds.n_pairs(), 1);
        assert_eq!(ds.n_subjects(), 1);
        assert_eq!(ds.observations().len(), 2);
    }

    #[test]
    fn probability_sum_violation() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write_file(
            &dir,
            "pairs.csv",
            "pair_id,vA1,pA1,vA2,pA2,vB1,pB1,vB2\np1,10,0.6,-10,0.5,5,1.0,5\n",
        );
        let err = load_pairs(&pairs, LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("sum to 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Lottery::new(10.0, 0.6, -10.0, 0.5),
            Err(Error::ProbabilitySum { .. })
        ));
    }

    #[test]
    fn duplicate_observation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let obs = write_file(
            &dir,
            "obs.csv",
            "subject_id,pair_id,session,choice\ns1,p1,1,A\ns2,p1,1,A\ns1,p1,1,B\n",
        );
        match load_observations(&obs).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let obs = write_file(&dir, "obs.csv", "subject_id,pair_id,session,choice\ns1,p1,3,A\n");
        assert!(matches!(load_observations(&obs), Err(Error::Parse { line: 2, .. })));
        let pairs = write_file(&dir, "pairs.csv", "pair_id,vA1,pA1,vA2,vB1,pB1,vB2\np1,10,0.1234567,0,1,1,1\n");
        assert!(matches!(load_pairs(&pairs, LoadOptions::default()), Err(Error::Parse { line: 2, .. })));
        let pairs = write_file(&dir, "pairs2.csv", "pair_id,vA1,pA1,vA2,vB1,pB1,vB2\np1,150,0.5,0,1,1,1\n");
        assert!(load_pairs(&pairs, LoadOptions::default()).is_err());
        assert!(load_pairs(&pairs, LoadOptions { outcome_bound: None }).is_ok());
    }

    #[test]
    fn unknown_references_rejected() {
        let pairs = vec![LotteryPair::new("p1", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0))];
        let bad = [obs("s1", "p9", Session::Time1, Choice::A)];
        assert!(matches!(ChoiceDataset::new(pairs, &bad), Err(Error::UnknownPair(_))));
    }

    #[test]
    fn table_two_first_pair() {
        let a = lot(56.0, 0.05, 72.0);
        let b = lot(68.0, 0.95, 95.0);
        let pair = LotteryPair::new("t2-1", a, b);
        assert_eq!(pair.kind, LotteryKind::PureGain);
        assert!((a.expected_value() - 71.2).abs() < 1e-9);
        assert!((b.expected_value() - 69.35).abs() < 1e-9);
    }

    #[test]
    fn kinds() {
        assert_eq!(classify_kind(&lot(10.0, 0.5, 20.0), &lot(5.0, 0.2, 1.0)), LotteryKind::PureGain);
        assert_eq!(
            classify_kind(&lot(-8.0, 0.66, -95.0), &lot(-42.0, 0.93, -30.0)),
            LotteryKind::PureLoss
        );
        assert_eq!(classify_kind(&lot(50.0, 0.5, 0.0), &lot(-30.0, 0.5, 0.0)), LotteryKind::MixedZero);
        assert_eq!(
            classify_kind(&lot(96.0, 0.61, -67.0), &lot(71.0, 0.5, -26.0)),
            LotteryKind::Mixed
        );
        // zeros without a loss are not mixed-zero
        assert_eq!(classify_kind(&lot(50.0, 0.5, 0.0), &lot(30.0, 0.5, 20.0)), LotteryKind::Mixed);
    }

    fn population(n_a: usize, n_b: usize) -> ChoiceDataset {
        let pairs = vec![LotteryPair::new("p", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0))];
        let mut o = Vec::new();
        for i in 0..n_a + n_b {
            let c = if i < n_a { Choice::A } else { Choice::B };
            o.push(obs(&format!("s{i:03}"), "p", Session::Time1, c));
        }
        ChoiceDataset::new(pairs, &o).unwrap()
    }

    #[test]
    fn frequencies() {
        let ds = population(71, 71);
        assert_eq!(ds.choice_frequency("p", Session::Time1).unwrap(), 0.5);
        assert_eq!(ds.majority_frequency("p", Session::Time1).unwrap(), 0.5);
        assert_eq!(ds.majority_choice_at(0, Session::Time1), Some(Choice::B));
        assert!(ds.majority_is_tie(0, Session::Time1));
        let ds = population(10, 0);
        assert_eq!(ds.choice_frequency("p", Session::Time1).unwrap(), 0.0);
        let ds = population(7, 3);
        assert!((ds.majority_frequency("p", Session::Time1).unwrap() - 0.7).abs() < 1e-15);
        assert!(ds.choice_frequency("p", Session::Time2).is_err());
    }

    #[test]
    fn shift_extremes() {
        let pairs = vec![LotteryPair::new("p", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0))];
        let mut same = Vec::new();
        let mut flip = Vec::new();
        for i in 0..5 {
            let s = format!("s{i}");
            let c = if i % 2 == 0 { Choice::A } else { Choice::B };
            same.push(obs(&s, "p", Session::Time1, c));
            same.push(obs(&s, "p", Session::Time2, c));
            flip.push(obs(&s, "p", Session::Time1, c));
            flip.push(obs(&s, "p", Session::Time2, c.flipped()));
        }
        // a subject seen only at time 1 is excluded from the denominator
        same.push(obs("lonely", "p", Session::Time1, Choice::A));
        let ds = ChoiceDataset::new(pairs.clone(), &same).unwrap();
        assert_eq!(ds.shift_frequency("p").unwrap(), 0.0);
        assert_eq!(ds.completeness().subjects_missing_a_session, 1);
        let ds = ChoiceDataset::new(pairs.clone(), &flip).unwrap();
        assert_eq!(ds.shift_frequency("p").unwrap(), 1.0);
        let ds = ChoiceDataset::new(pairs, &[obs("s", "p", Session::Time1, Choice::A)]).unwrap();
        assert!(ds.shift_frequency("p").is_err());
    }

    #[test]
    fn majority_stats_extremes() {
        let pairs = vec![
            LotteryPair::new("p1", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0)),
            LotteryPair::new("p2", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0)),
        ];
        let mut o = Vec::new();
        for session in Session::BOTH {
            o.push(obs("solo", "p1", session, Choice::A));
            o.push(obs("solo", "p2", session, Choice::B));
        }
        let ds = ChoiceDataset::new(pairs.clone(), &o).unwrap();
        let st = ds.subject_majority_stats();
        assert_eq!(st[0].time1, Some(1.0));
        assert_eq!(st[0].time2, Some(1.0));

        // three majoritarians and one subject always opposing them
        let mut o = Vec::new();
        for session in Session::BOTH {
            for s in ["m1", "m2", "m3"] {
                o.push(obs(s, "p1", session, Choice::A));
                o.push(obs(s, "p2", session, Choice::B));
            }
            o.push(obs("z", "p1", session, Choice::B));
            o.push(obs("z", "p2", session, Choice::A));
        }
        let ds = ChoiceDataset::new(pairs, &o).unwrap();
        let z = ds.subject_majority_stats().into_iter().find(|m| m.subject == "z").unwrap();
        assert_eq!((z.time1, z.time2), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn sampled_frequencies_match_probabilities() {
        use rand::Rng;
        let mut rng = crate::rng::substream(11, &[1]);
        let pairs = vec![LotteryPair::new("p", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0))];
        let mut o = Vec::new();
        for i in 0..10_000 {
            let s = format!("s{i}");
            for (session, p_b) in [(Session::Time1, 0.8), (Session::Time2, 0.1)] {
                let c = if rng.random::<f64>() < p_b { Choice::B } else { Choice::A };
                o.push(obs(&s, "p", session, c));
            }
        }
        let ds = ChoiceDataset::new(pairs, &o).unwrap();
        assert!((ds.choice_frequency("p", Session::Time1).unwrap() - 0.8).abs() < 0.02);
        assert!((ds.majority_frequency("p", Session::Time2).unwrap() - 0.9).abs() < 0.02);
        // sessions independent with p(B) 0.8 / 0.1: shift = 0.8*0.9 + 0.2*0.1
        assert!((ds.shift_frequency("p").unwrap() - 0.74).abs() < 0.02);
    }

    #[test]
    fn homogeneous_shift_sampling() {
        use rand::Rng;
        let mut rng = crate::rng::substream(12, &[1]);
        let pairs = vec![LotteryPair::new("p", lot(1.0, 0.5, 2.0), lot(3.0, 1.0, 3.0))];
        let mut o = Vec::new();
        for i in 0..10_000 {
            let s = format!("s{i}");
            for session in Session::BOTH {
                let c = if rng.random::<f64>() < 0.75 { Choice::A } else { Choice::B };
                o.push(obs(&s, "p", session, c));
            }
        }
        let ds = ChoiceDataset::new(pairs, &o).unwrap();
        assert!((ds.shift_frequency("p").unwrap() - 0.375).abs() < 0.02);
    }

    fn arb_dataset() -> impl Strategy<Value = ChoiceDataset> {
        (1usize..4, 1usize..6).prop_flat_map(|(n_pairs, n_subjects)| {
            proptest::collection::vec(0u8..3, n_pairs * n_subjects * 2).prop_map(move |cells| {
                let pairs: Vec<LotteryPair> = (0..n_pairs)
                    .map(|p| LotteryPair::new(format!("p{p}"), lot(10.0, 0.3, -5.0), lot(2.0, 1.0, 2.0)))
                    .collect();
                let mut o = Vec::new();
                for s in 0..n_subjects {
                    for p in 0..n_pairs {
                        for (k, session) in Session::BOTH.into_iter().enumerate() {
                            let c = match cells[(s * n_pairs + p) * 2 + k] {
                                0 => continue,
                                1 => Choice::A,
                                _ => Choice::B,
                            };
                            o.push(obs(&format!("s{s}"), &format!("p{p}"), session, c));
                        }
                    }
                }
                ChoiceDataset::new(pairs, &o).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn frequency_laws(ds in arb_dataset()) {
            for p in 0..ds.n_pairs() {
                for session in Session::BOTH {
                    let (a, b) = ds.counts(p, session, None);
                    if a + b == 0 { continue; }
                    let fb = ds.choice_frequency_at(p, session).unwrap();
                    let fa = a as f64 / (a + b) as f64;
                    prop_assert_eq!(fa + fb, 1.0);
                    prop_assert!(ds.majority_frequency_at(p, session).unwrap() >= 0.5);
                }
            }
        }

        #[test]
        fn shift_invariant_under_relabeling(ds in arb_dataset()) {
            let relabeled: Vec<ChoiceObservation> = ds
                .observations()
                .into_iter()
                .map(|mut o| { o.choice = o.choice.flipped(); o })
                .collect();
            let pairs: Vec<LotteryPair> = ds.pairs().iter().map(LotteryPair::swapped).collect();
            let other = ChoiceDataset::new(pairs, &relabeled).unwrap();
            for p in 0..ds.n_pairs() {
                let s1 = ds.shift_frequency_at(p).ok();
                let s2 = other.shift_frequency_at(p).ok();
                prop_assert_eq!(s1, s2);
            }
        }

        #[test]
        fn csv_round_trip(ds in arb_dataset()) {
            let dir = tempfile::tempdir().unwrap();
            let pp = dir.path().join("pairs.csv");
            let op = dir.path().join("obs.csv");
            save_dataset(&ds, &pp, &op).unwrap();
            let back = load_dataset(&pp, &op, LoadOptions::default()).unwrap();
            prop_assert_eq!(back.observations(), ds.observations());
            prop_assert_eq!(back.pairs(), ds.pairs());
        }
    }
}
