//! MBTI type dynamics: the eight cognitive processes, the
//! Dominant/Auxiliary/Tertiary/Inferior hierarchy and type codes.
//!
//! Everything here is pure and deterministic. The stack completion follows
//! the alternating-attitude convention: the tertiary process shares the
//! dominant's attitude and the inferior process takes the opposite one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    #[error("{auxiliary} is not a legal auxiliary for dominant {dominant}")]
    InvalidPair {
        dominant: CognitiveFunction,
        auxiliary: CognitiveFunction,
    },
    #[error("unknown personality type code {0:?}")]
    UnknownType(String),
    #[error("unknown cognitive process name {0:?}")]
    UnknownProcessName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    Sensing,
    Intuition,
    Thinking,
    Feeling,
}

impl Letter {
    pub fn kind(self) -> Kind {
        match self {
            Letter::Sensing | Letter::Intuition => Kind::Perceiving,
            Letter::Thinking | Letter::Feeling => Kind::Judging,
        }
    }

    /// The other letter of the same pair (S/N or T/F).
    pub fn opposite(self) -> Letter {
        match self {
            Letter::Sensing => Letter::Intuition,
            Letter::Intuition => Letter::Sensing,
            Letter::Thinking => Letter::Feeling,
            Letter::Feeling => Letter::Thinking,
        }
    }

    pub fn code(self) -> char {
        match self {
            Letter::Sensing => 'S',
            Letter::Intuition => 'N',
            Letter::Thinking => 'T',
            Letter::Feeling => 'F',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Letter::Sensing => "Sensing",
            Letter::Intuition => "Intuition",
            Letter::Thinking => "Thinking",
            Letter::Feeling => "Feeling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attitude {
    Extraverted,
    Introverted,
}

impl Attitude {
    pub fn opposite(self) -> Attitude {
        match self {
            Attitude::Extraverted => Attitude::Introverted,
            Attitude::Introverted => Attitude::Extraverted,
        }
    }

    pub fn code(self) -> char {
        match self {
            Attitude::Extraverted => 'E',
            Attitude::Introverted => 'I',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Perceiving,
    Judging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressImpact {
    Positive,
    Negative,
}

impl StressImpact {
    pub fn as_str(self) -> &'static str {
        match self {
            StressImpact::Positive => "positive",
            StressImpact::Negative => "negative",
        }
    }

    pub fn parse(s: &str) -> Option<StressImpact> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Some(StressImpact::Positive),
            "negative" => Some(StressImpact::Negative),
            _ => None,
        }
    }
}

/// One of the eight cognitive processes.
///
/// Declaration order is the canonical order Se < Si < Ne < Ni < Te < Ti < Fe < Fi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CognitiveFunction {
    Se,
    Si,
    Ne,
    Ni,
    Te,
    Ti,
    Fe,
    Fi,
}

impl CognitiveFunction {
    pub const ALL: [CognitiveFunction; 8] = [
        CognitiveFunction::Se,
        CognitiveFunction::Si,
        CognitiveFunction::Ne,
        CognitiveFunction::Ni,
        CognitiveFunction::Te,
        CognitiveFunction::Ti,
        CognitiveFunction::Fe,
        CognitiveFunction::Fi,
    ];

    pub fn new(letter: Letter, attitude: Attitude) -> CognitiveFunction {
        use Attitude::*;
        use CognitiveFunction::*;
        match (letter, attitude) {
            (Letter::Sensing, Extraverted) => Se,
            (Letter::Sensing, Introverted) => Si,
            (Letter::Intuition, Extraverted) => Ne,
            (Letter::Intuition, Introverted) => Ni,
            (Letter::Thinking, Extraverted) => Te,
            (Letter::Thinking, Introverted) => Ti,
            (Letter::Feeling, Extraverted) => Fe,
            (Letter::Feeling, Introverted) => Fi,
        }
    }

    pub fn letter(self) -> Letter {
        use CognitiveFunction::*;
        match self {
            Se | Si => Letter::Sensing,
            Ne | Ni => Letter::Intuition,
            Te | Ti => Letter::Thinking,
            Fe | Fi => Letter::Feeling,
        }
    }

    pub fn attitude(self) -> Attitude {
        use CognitiveFunction::*;
        match self {
            Se | Ne | Te | Fe => Attitude::Extraverted,
            Si | Ni | Ti | Fi => Attitude::Introverted,
        }
    }

    pub fn kind(self) -> Kind {
        self.letter().kind()
    }

    pub fn abbreviation(self) -> &'static str {
        use CognitiveFunction::*;
        match self {
            Se => "Se",
            Si => "Si",
            Ne => "Ne",
            Ni => "Ni",
            Te => "Te",
            Ti => "Ti",
            Fe => "Fe",
            Fi => "Fi",
        }
    }

    /// Full process name, e.g. "Introverted Sensing".
    pub fn name(self) -> &'static str {
        use CognitiveFunction::*;
        match self {
            Se => "Extraverted Sensing",
            Si => "Introverted Sensing",
            Ne => "Extraverted Intuition",
            Ni => "Introverted Intuition",
            Te => "Extraverted Thinking",
            Ti => "Introverted Thinking",
            Fe => "Extraverted Feeling",
            Fi => "Introverted Feeling",
        }
    }

    pub fn normal_description(self) -> &'static str {
        use CognitiveFunction::*;
        match self {
            Se => "Acts on concrete data in the here and now. Likes to experience the world\u{2014}active, talkative, and social. Trusts the present, what is tangible and real.",
            Si => "Compares present facts and situations to past experience. Excellent recall for specific details. Trusts and remembers the past. Stores sensory data that is important to them for future use.",
            Ne => "Sees possibilities in the external world. Enthusiastic and enjoys networking. Trusts the big picture, and forms patterns and connections, which can then be shared with others.",
            Ni => "Can appear visionary. Connects unconscious images, themes, and connections to see things in new ways. Brainstorm internally with themselves. Trusts and relies on inner insights, which may be hard for others to understand.",
            Te => "Seeks logic and consistency in the outside world. Concern for external laws and rules. Logical, analytical decision-makers who organize the environment to achieve goals.",
            Ti => "Seeks internal consistency and logic of ideas. Trust's internal framework, which may be difficult to explain to others. Experience a depth of concentration that is objective and analytical.",
            Fe => "Seeks harmony with and between people in the outside world. Interpersonal and cultural values are important. Encouraging and interested in others.",
            Fi => "Seeks harmony of action and thoughts with personal values. May not always articulate those values. Empathetic, sensitive, and idealistic.",
        }
    }

    pub fn overused_description(self) -> &'static str {
        use CognitiveFunction::*;
        match self {
            Se => "When the stress level is high, this function will tend to be overindulgent, hyperactive, and overly talkative.",
            Si => "When the stress level is high, this function will tend to be dogmatic, obsess about unimportant data, and withdraw.",
            Ne => "When the stress level is high, this function will tend to be over the top, swamped with options, and change for the sake of change.",
            Ni => "When the stress level is high, this function will tend to have unrealistic visions, only accept data that supports their theories, and make things overcomplicated.",
            Te => "When the stress level is high, this function will tend to be detached, cold, overly rational, and critique the lack of logic in others.",
            Ti => "When the stress level is high, this function will tend to be an obsessive search for the truth, detached, look only at the cons, driven like a machine out of control.",
            Fe => "When the stress level is high, this function will tend to be insistent, meaning that they know what is best for everyone, are intrusive, ignore problems, and force superficial harmony.",
            Fi => "When stress levels are high, this function will tend to carry the weight of the world on their shoulders, be hypersensitive, pompous, and feel sorry for themselves.",
        }
    }

    /// Description matching the process's operating mode.
    pub fn description(self, impact: StressImpact) -> &'static str {
        match impact {
            StressImpact::Positive => self.normal_description(),
            StressImpact::Negative => self.overused_description(),
        }
    }

    /// "Introverted Sensing (Si): <normal description> <overused description>"
    pub fn full_entry(self) -> String {
        format!(
            "{} ({}): {} {}",
            self.name(),
            self.abbreviation(),
            self.normal_description(),
            self.overused_description()
        )
    }

    /// Tolerant parser for process names produced by a model: accepts
    /// abbreviations ("Si"), full names in either spelling ("Extroverted
    /// Feeling", "extraverted  feeling"), and decorated forms
    /// ("Introverted Sensing (Si)").
    pub fn parse_name(raw: &str) -> Option<CognitiveFunction> {
        let squashed: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        if squashed.len() == 2 {
            return CognitiveFunction::ALL
                .into_iter()
                .find(|f| f.abbreviation().eq_ignore_ascii_case(&squashed));
        }
        let intro = squashed.contains("introvert");
        let extra = squashed.contains("extravert") || squashed.contains("extrovert");
        let attitude = match (intro, extra) {
            (true, false) => Attitude::Introverted,
            (false, true) => Attitude::Extraverted,
            _ => return None,
        };
        let letters: Vec<Letter> = [
            (Letter::Sensing, "sens"),
            (Letter::Intuition, "intui"),
            (Letter::Thinking, "think"),
            (Letter::Feeling, "feel"),
        ]
        .into_iter()
        .filter(|(_, stem)| squashed.contains(stem))
        .map(|(l, _)| l)
        .collect();
        match letters.as_slice() {
            [letter] => Some(CognitiveFunction::new(*letter, attitude)),
            _ => None,
        }
    }
}

impl fmt::Display for CognitiveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CognitiveFunction {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CognitiveFunction::parse_name(s).ok_or_else(|| DynamicsError::UnknownProcessName(s.into()))
    }
}

impl Serialize for CognitiveFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CognitiveFunction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Position of a process in the hierarchy, highest rank first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProcessStage {
    Dominant,
    Auxiliary,
    Tertiary,
    Inferior,
}

impl ProcessStage {
    pub const ALL: [ProcessStage; 4] = [
        ProcessStage::Dominant,
        ProcessStage::Auxiliary,
        ProcessStage::Tertiary,
        ProcessStage::Inferior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessStage::Dominant => "Dominant",
            ProcessStage::Auxiliary => "Auxiliary",
            ProcessStage::Tertiary => "Tertiary",
            ProcessStage::Inferior => "Inferior",
        }
    }

    pub fn parse(s: &str) -> Option<ProcessStage> {
        let s = s.trim().to_ascii_lowercase();
        ProcessStage::ALL
            .into_iter()
            .find(|st| s.starts_with(&st.as_str().to_ascii_lowercase()))
    }

    /// 0 for Dominant .. 3 for Inferior.
    pub fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ProcessStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProcessStage::parse(s).ok_or_else(|| format!("unknown process stage {s:?}"))
    }
}

/// A four-letter MBTI code, stored uppercase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeCode([u8; 4]);

impl TypeCode {
    /// All sixteen codes in lexicographic order.
    pub fn all() -> Vec<TypeCode> {
        let mut codes = Vec::with_capacity(16);
        for a in *b"EI" {
            for b in *b"NS" {
                for c in *b"FT" {
                    for d in *b"JP" {
                        codes.push(TypeCode([a, b, c, d]));
                    }
                }
            }
        }
        codes
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("type codes are ascii")
    }

    pub fn attitude(&self) -> Attitude {
        if self.0[0] == b'E' {
            Attitude::Extraverted
        } else {
            Attitude::Introverted
        }
    }

    pub fn perceiving(&self) -> Letter {
        if self.0[1] == b'S' {
            Letter::Sensing
        } else {
            Letter::Intuition
        }
    }

    pub fn judging(&self) -> Letter {
        if self.0[2] == b'T' {
            Letter::Thinking
        } else {
            Letter::Feeling
        }
    }

    pub fn is_judging(&self) -> bool {
        self.0[3] == b'J'
    }

    pub fn role(&self) -> PersonalityRole {
        match (self.perceiving(), self.judging(), self.is_judging()) {
            (Letter::Intuition, Letter::Thinking, _) => PersonalityRole::Analysts,
            (Letter::Intuition, _, _) => PersonalityRole::Diplomats,
            (_, _, true) => PersonalityRole::Sentinels,
            _ => PersonalityRole::Explorers,
        }
    }
}

impl fmt::Display for TypeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypeCode {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let bytes = upper.as_bytes();
        let ok = bytes.len() == 4
            && matches!(bytes[0], b'E' | b'I')
            && matches!(bytes[1], b'S' | b'N')
            && matches!(bytes[2], b'T' | b'F')
            && matches!(bytes[3], b'J' | b'P');
        if !ok {
            return Err(DynamicsError::UnknownType(s.to_string()));
        }
        Ok(TypeCode([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

impl Serialize for TypeCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TypeCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The standard four-way grouping of the sixteen types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PersonalityRole {
    Analysts,
    Diplomats,
    Sentinels,
    Explorers,
}

impl PersonalityRole {
    pub const ALL: [PersonalityRole; 4] = [
        PersonalityRole::Analysts,
        PersonalityRole::Diplomats,
        PersonalityRole::Sentinels,
        PersonalityRole::Explorers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PersonalityRole::Analysts => "Analysts",
            PersonalityRole::Diplomats => "Diplomats",
            PersonalityRole::Sentinels => "Sentinels",
            PersonalityRole::Explorers => "Explorers",
        }
    }

    /// Member types in lexicographic order.
    pub fn types(self) -> Vec<TypeCode> {
        TypeCode::all()
            .into_iter()
            .filter(|t| t.role() == self)
            .collect()
    }

    /// Case-insensitive, tolerant of singular/plural ("Sentinel").
    pub fn parse(s: &str) -> Option<PersonalityRole> {
        let norm = s.trim().trim_end_matches(['s', 'S']).to_ascii_lowercase();
        PersonalityRole::ALL
            .into_iter()
            .find(|r| r.name().trim_end_matches('s').to_ascii_lowercase() == norm)
    }
}

impl fmt::Display for PersonalityRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dominant, auxiliary, tertiary and inferior processes of one type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionStack {
    pub dominant: CognitiveFunction,
    pub auxiliary: CognitiveFunction,
    pub tertiary: CognitiveFunction,
    pub inferior: CognitiveFunction,
}

impl FunctionStack {
    pub fn get(&self, stage: ProcessStage) -> CognitiveFunction {
        match stage {
            ProcessStage::Dominant => self.dominant,
            ProcessStage::Auxiliary => self.auxiliary,
            ProcessStage::Tertiary => self.tertiary,
            ProcessStage::Inferior => self.inferior,
        }
    }

    pub fn processes(&self) -> [(ProcessStage, CognitiveFunction); 4] {
        ProcessStage::ALL.map(|s| (s, self.get(s)))
    }

    pub fn type_code(&self) -> TypeCode {
        let (perceiving, judging) = if self.dominant.kind() == Kind::Perceiving {
            (self.dominant, self.auxiliary)
        } else {
            (self.auxiliary, self.dominant)
        };
        let extraverted = if self.dominant.attitude() == Attitude::Extraverted {
            self.dominant
        } else {
            self.auxiliary
        };
        let jp = if extraverted.kind() == Kind::Judging {
            b'J'
        } else {
            b'P'
        };
        TypeCode([
            self.dominant.attitude().code() as u8,
            perceiving.letter().code() as u8,
            judging.letter().code() as u8,
            jp,
        ])
    }

    /// All sixteen legal stacks, ordered by (dominant, auxiliary) in canonical order.
    pub fn all() -> Vec<FunctionStack> {
        CognitiveFunction::ALL
            .into_iter()
            .flat_map(|d| {
                auxiliary_candidates(d)
                    .into_iter()
                    .map(move |a| derive_stack(d, a).expect("candidate pairs are legal"))
            })
            .collect()
    }
}

impl fmt::Display for FunctionStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}-{} ({})",
            self.dominant.abbreviation(),
            self.auxiliary.abbreviation(),
            self.tertiary.abbreviation(),
            self.inferior.abbreviation(),
            self.type_code()
        )
    }
}

/// The two processes that may follow `dominant`: opposite kind and opposite
/// attitude, in canonical order.
pub fn auxiliary_candidates(dominant: CognitiveFunction) -> [CognitiveFunction; 2] {
    let attitude = dominant.attitude().opposite();
    let (first, second) = match dominant.kind() {
        Kind::Perceiving => (Letter::Thinking, Letter::Feeling),
        Kind::Judging => (Letter::Sensing, Letter::Intuition),
    };
    [
        CognitiveFunction::new(first, attitude),
        CognitiveFunction::new(second, attitude),
    ]
}

pub fn is_legal_auxiliary(dominant: CognitiveFunction, auxiliary: CognitiveFunction) -> bool {
    auxiliary_candidates(dominant).contains(&auxiliary)
}

/// Completes a stack from its first two processes by depth-first search over
/// the remaining processes for the tertiary and inferior slots.
pub fn derive_stack(
    dominant: CognitiveFunction,
    auxiliary: CognitiveFunction,
) -> Result<FunctionStack, DynamicsError> {
    if !is_legal_auxiliary(dominant, auxiliary) {
        return Err(DynamicsError::InvalidPair {
            dominant,
            auxiliary,
        });
    }
    let mut chosen = vec![dominant, auxiliary];
    if !fill_slots(&mut chosen) {
        unreachable!("every legal pair has a completion");
    }
    Ok(FunctionStack {
        dominant,
        auxiliary,
        tertiary: chosen[2],
        inferior: chosen[3],
    })
}

fn slot_admits(chosen: &[CognitiveFunction], candidate: CognitiveFunction) -> bool {
    let (dominant, auxiliary) = (chosen[0], chosen[1]);
    match chosen.len() {
        2 => {
            candidate.letter() == auxiliary.letter().opposite()
                && candidate.attitude() == dominant.attitude()
        }
        3 => {
            candidate.letter() == dominant.letter().opposite()
                && candidate.attitude() == dominant.attitude().opposite()
        }
        _ => false,
    }
}

fn fill_slots(chosen: &mut Vec<CognitiveFunction>) -> bool {
    if chosen.len() == 4 {
        return true;
    }
    for candidate in CognitiveFunction::ALL {
        if chosen.contains(&candidate) || !slot_admits(chosen, candidate) {
            continue;
        }
        chosen.push(candidate);
        if fill_slots(chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

/// Inverse of [`FunctionStack::type_code`]. Case-insensitive.
pub fn stack_from_type(code: &str) -> Result<FunctionStack, DynamicsError> {
    let code: TypeCode = code.parse()?;
    Ok(stack_for(code))
}

pub fn stack_for(code: TypeCode) -> FunctionStack {
    let attitude = code.attitude();
    // The extraverted process of the leading pair is the judging one for J types.
    let extraverted_letter = if code.is_judging() {
        code.judging()
    } else {
        code.perceiving()
    };
    let introverted_letter = if code.is_judging() {
        code.perceiving()
    } else {
        code.judging()
    };
    let (dominant, auxiliary) = match attitude {
        Attitude::Extraverted => (
            CognitiveFunction::new(extraverted_letter, Attitude::Extraverted),
            CognitiveFunction::new(introverted_letter, Attitude::Introverted),
        ),
        Attitude::Introverted => (
            CognitiveFunction::new(introverted_letter, Attitude::Introverted),
            CognitiveFunction::new(extraverted_letter, Attitude::Extraverted),
        ),
    };
    derive_stack(dominant, auxiliary).expect("type codes map to legal pairs")
}

pub fn function_description(f: CognitiveFunction, impact: StressImpact) -> &'static str {
    f.description(impact)
}

/// The eight process descriptions as supplied to the model during type prediction.
pub fn all_process_descriptions() -> String {
    CognitiveFunction::ALL
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{}. {}", i + 1, f.full_entry()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use CognitiveFunction::*;

    // Brute-force oracle: a pair is legal iff it satisfies the stack
    // invariants; independent of `auxiliary_candidates`.
    fn pair_is_legal(d: CognitiveFunction, a: CognitiveFunction) -> bool {
        d.kind() != a.kind() && d.attitude() != a.attitude()
    }

    #[test]
    fn candidates_match_enumeration() {
        for d in CognitiveFunction::ALL {
            let brute: Vec<_> = CognitiveFunction::ALL
                .into_iter()
                .filter(|&a| pair_is_legal(d, a))
                .collect();
            assert_eq!(brute, auxiliary_candidates(d).to_vec(), "dominant {d:?}");
        }
        assert_eq!(auxiliary_candidates(Si), [Te, Fe]);
        assert_eq!(auxiliary_candidates(Te), [Si, Ni]);
        assert_eq!(auxiliary_candidates(Se), [Ti, Fi]);
    }

    #[test]
    fn known_stacks() {
        let isfj = derive_stack(Si, Fe).unwrap();
        assert_eq!((isfj.tertiary, isfj.inferior), (Ti, Ne));
        assert_eq!(isfj.type_code().as_str(), "ISFJ");

        let entj = derive_stack(Te, Ni).unwrap();
        assert_eq!((entj.tertiary, entj.inferior), (Se, Fi));
        assert_eq!(entj.type_code().as_str(), "ENTJ");

        let istj = derive_stack(Si, Te).unwrap();
        assert_eq!((istj.tertiary, istj.inferior), (Fi, Ne));
        assert_eq!(istj.type_code().as_str(), "ISTJ");
    }

    #[test]
    fn illegal_pair_rejected() {
        assert!(matches!(
            derive_stack(Si, Se),
            Err(DynamicsError::InvalidPair { .. })
        ));
        assert!(derive_stack(Si, Fi).is_err());
    }

    #[test]
    fn sixteen_stacks_bijective() {
        let stacks = FunctionStack::all();
        assert_eq!(stacks.len(), 16);
        let codes: HashSet<_> = stacks.iter().map(|s| s.type_code()).collect();
        assert_eq!(codes.len(), 16);
        assert_eq!(codes, TypeCode::all().into_iter().collect());
        for s in &stacks {
            let set: HashSet<_> = s.processes().iter().map(|p| p.1).collect();
            assert_eq!(set.len(), 4);
            assert_eq!(stack_from_type(s.type_code().as_str()).unwrap(), *s);
        }
    }

    #[test]
    fn type_parsing() {
        assert_eq!(stack_from_type("isfj").unwrap(), derive_stack(Si, Fe).unwrap());
        assert_eq!(stack_from_type("ENTJ").unwrap(), derive_stack(Te, Ni).unwrap());
        assert_eq!(
            stack_from_type("XXXX"),
            Err(DynamicsError::UnknownType("XXXX".into()))
        );
        assert!(stack_from_type("ISF").is_err());
    }

    #[test]
    fn descriptions() {
        assert!(function_description(Se, StressImpact::Positive).starts_with("Acts on concrete data"));
        assert!(function_description(Fi, StressImpact::Negative)
            .contains("carry the weight of the world"));
        assert!(function_description(Ti, StressImpact::Positive)
            .contains("Seeks internal consistency"));
        for f in CognitiveFunction::ALL {
            assert!(f.overused_description().contains("high"));
            assert!(!f.normal_description().contains("When"));
        }
    }

    #[test]
    fn process_name_parsing() {
        assert_eq!(CognitiveFunction::parse_name("Introverted Sensing"), Some(Si));
        assert_eq!(CognitiveFunction::parse_name("Extroverted Feeling"), Some(Fe));
        assert_eq!(CognitiveFunction::parse_name("  extraverted   THINKING "), Some(Te));
        assert_eq!(CognitiveFunction::parse_name("Introverted Intuition (Ni)"), Some(Ni));
        assert_eq!(CognitiveFunction::parse_name("IntrovertedFeeling"), Some(Fi));
        assert_eq!(CognitiveFunction::parse_name("ne"), Some(Ne));
        assert_eq!(CognitiveFunction::parse_name("Introverted Wishing"), None);
        assert_eq!(CognitiveFunction::parse_name("Sensing"), None);
    }

    #[test]
    fn roles_partition_types() {
        let mut seen = HashSet::new();
        for r in PersonalityRole::ALL {
            let types = r.types();
            assert_eq!(types.len(), 4, "{r}");
            seen.extend(types);
        }
        assert_eq!(seen.len(), 16);
        assert_eq!(
            PersonalityRole::Sentinels
                .types()
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>(),
            ["ESFJ", "ESTJ", "ISFJ", "ISTJ"]
        );
        assert_eq!(PersonalityRole::parse("sentinel"), Some(PersonalityRole::Sentinels));
        assert_eq!(PersonalityRole::parse("Explorers"), Some(PersonalityRole::Explorers));
    }
}
