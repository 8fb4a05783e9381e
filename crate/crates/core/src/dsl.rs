//! Skill DSL: registry, parser, noisy-output extraction and canonical rendering.
//!
//! A program is a sequence of calls of the form
//!
//! ```text
//! Pick("Apple", {"gripper_state": "close", "orientation": [pi, 0, 0]})
//! Place("Basket", {"pose": [0.6, 0.4, 0.15], "gripper_state": "open"})
//! ```
//!
//! Grammar:
//!
//! ```text
//! program := call*
//! call    := NAME "(" STRING ("," dict)? ")"
//! dict    := "{" (STRING ":" value ("," STRING ":" value)* ","?)? "}"
//! value   := number | STRING | "[" number ("," number)* "]"
//! number  := "-"? (DECIMAL | "pi" ("/" DECIMAL)?)
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

/// Skill names known without any configuration.
pub const BUILTIN_SKILLS: [&str; 12] = [
    "Pick", "Place", "Lift", "Open", "Close", "Press", "Insert", "Pour", "Twist", "Hang", "Push",
    "Explore",
];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillName(String);

impl SkillName {
    /// Wraps a canonical name without consulting a registry.
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is(&self, name: &str) -> bool {
        self.0 == name
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid skill registry config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid skill name `{0}`")]
    InvalidName(String),
}

#[derive(Deserialize)]
struct RegistryConfig {
    skills: Vec<RegistryEntry>,
}

#[derive(Deserialize)]
struct RegistryEntry {
    name: String,
    #[serde(default)]
    params: Vec<String>,
}

/// The set of skill names the parser accepts, with advisory parameter schemas.
///
/// Lookup is case-insensitive; the stored spelling is the canonical form.
#[derive(Clone, Debug)]
pub struct SkillRegistry {
    by_folded: BTreeMap<String, SkillName>,
    schemas: BTreeMap<SkillName, Vec<String>>,
}

impl Default for SkillRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SkillRegistry {
    pub fn builtin() -> Self {
        let mut reg = Self { by_folded: BTreeMap::new(), schemas: BTreeMap::new() };
        let schema = |s: &str| -> Vec<String> {
            let keys: &[&str] = match s {
                "Pick" => &["gripper_state", "orientation"],
                "Place" | "Insert" | "Hang" => &["pose", "gripper_state", "destination"],
                "Pour" | "Twist" => &["angle"],
                "Lift" => &["height"],
                _ => &[],
            };
            keys.iter().map(|k| k.to_string()).collect()
        };
        for name in BUILTIN_SKILLS {
            reg.insert(name, schema(name));
        }
        reg
    }

    /// Builtins plus the extra skills listed in a JSON config of the form
    /// `{"skills": [{"name": "Wipe", "params": ["direction"]}]}`.
    pub fn from_config_json(text: &str) -> Result<Self, RegistryError> {
        let cfg: RegistryConfig = serde_json::from_str(text)?;
        let mut reg = Self::builtin();
        for entry in cfg.skills {
            reg.extend(&entry.name, entry.params)?;
        }
        Ok(reg)
    }

    /// Registers an extra skill; the first letter is upper-cased to form the canonical name.
    pub fn extend(&mut self, name: &str, params: Vec<String>) -> Result<SkillName, RegistryError> {
        let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(RegistryError::InvalidName(name.to_string()));
        }
        let mut chars = name.chars();
        let canonical: String = chars
            .next()
            .map(|c| c.to_ascii_uppercase())
            .into_iter()
            .chain(chars)
            .collect();
        Ok(self.insert(&canonical, params))
    }

    fn insert(&mut self, canonical: &str, params: Vec<String>) -> SkillName {
        let name = SkillName::new(canonical);
        self.by_folded.insert(canonical.to_ascii_lowercase(), name.clone());
        self.schemas.insert(name.clone(), params);
        name
    }

    pub fn lookup(&self, name: &str) -> Option<&SkillName> {
        self.by_folded.get(&name.to_ascii_lowercase())
    }

    pub fn param_schema(&self, name: &SkillName) -> Option<&[String]> {
        self.schemas.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &SkillName> {
        self.schemas.keys()
    }
}

/// A parameter value. Three-element vectors are classified by key: keys that
/// name a rotation hold angles in radians, all others hold positions in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Scalar(f64),
    Angles([f64; 3]),
    Position([f64; 3]),
    List(Vec<f64>),
    Text(String),
}

/// True for parameter keys whose triples are angles rather than positions.
pub fn is_angle_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    ["orient", "rot", "euler", "angle", "rpy"].iter().any(|p| k.contains(p))
}

impl ParamValue {
    fn from_numbers(key: &str, values: Vec<f64>) -> Self {
        match <[f64; 3]>::try_from(values.as_slice()) {
            Ok(triple) if is_angle_key(key) => ParamValue::Angles(triple),
            Ok(triple) => ParamValue::Position(triple),
            Err(_) => ParamValue::List(values),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_triple(&self) -> Option<[f64; 3]> {
        match self {
            ParamValue::Angles(v) | ParamValue::Position(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            ParamValue::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillCall {
    pub skill: SkillName,
    pub target: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl SkillCall {
    pub fn new(skill: &str, target: &str) -> Self {
        Self { skill: SkillName::new(skill), target: target.to_string(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.get(key)
    }
}

impl fmt::Display for SkillCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.skill, quote(&self.target))?;
        if !self.params.is_empty() {
            f.write_str(", ")?;
            f.write_str(&render_params(&self.params))?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Reference,
    Prediction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillSequence {
    pub calls: Vec<SkillCall>,
    pub origin: Origin,
}

impl SkillSequence {
    pub fn new(calls: Vec<SkillCall>, origin: Origin) -> Self {
        Self { calls, origin }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax { expected: String },
    UnknownSkill(String),
    DuplicateParam(String),
    EmptyTarget,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
    /// Byte offset into the source.
    pub offset: usize,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax { expected } => write!(f, "syntax error, expected {expected}"),
            ParseErrorKind::UnknownSkill(name) => write!(f, "unknown skill `{name}`"),
            ParseErrorKind::DuplicateParam(key) => write!(f, "duplicate parameter `{key}`"),
            ParseErrorKind::EmptyTarget => f.write_str("empty target entity"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    registry: &'a SkillRegistry,
}

type PResult<T> = Result<T, ParseError>;

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, registry: &'a SkillRegistry) -> Self {
        Self { src, pos: 0, registry }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn error_at(&self, offset: usize, kind: ParseErrorKind) -> ParseError {
        let before = &self.src[..offset];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        let col = before[line_start..].chars().count() + 1;
        ParseError { kind, line, col, offset }
    }

    fn expected(&self, what: &str) -> ParseError {
        self.error_at(self.pos, ParseErrorKind::Syntax { expected: what.to_string() })
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.expected(&format!("`{c}`")))
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let start = self.pos;
        if !self.peek().is_some_and(is_ident_start) {
            return None;
        }
        while self.peek().is_some_and(is_ident_char) {
            self.bump();
        }
        Some(&self.src[start..self.pos])
    }

    fn program(&mut self) -> PResult<Vec<SkillCall>> {
        let mut calls = Vec::new();
        loop {
            self.skip_ws();
            if self.peek().is_none() {
                return Ok(calls);
            }
            calls.push(self.call()?);
        }
    }

    fn call(&mut self) -> PResult<SkillCall> {
        let start = self.pos;
        let name = self.ident().ok_or_else(|| self.expected("skill name"))?;
        let skill = self
            .registry
            .lookup(name)
            .cloned()
            .ok_or_else(|| self.error_at(start, ParseErrorKind::UnknownSkill(name.to_string())))?;
        self.skip_ws();
        self.expect('(')?;
        self.skip_ws();
        let target_at = self.pos;
        let target = self.string()?;
        if target.trim().is_empty() {
            return Err(self.error_at(target_at, ParseErrorKind::EmptyTarget));
        }
        self.skip_ws();
        let mut params = BTreeMap::new();
        if self.eat(',') {
            self.skip_ws();
            params = self.dict()?;
            self.skip_ws();
        }
        self.expect(')')?;
        Ok(SkillCall { skill, target, params })
    }

    fn node_label(&mut self) -> PResult<SkillCall> {
        let start = self.pos;
        let name = self.ident().ok_or_else(|| self.expected("skill name"))?;
        let skill = self
            .registry
            .lookup(name)
            .cloned()
            .ok_or_else(|| self.error_at(start, ParseErrorKind::UnknownSkill(name.to_string())))?;
        self.expect('(')?;
        let target_at = self.pos;
        let target = self.string()?;
        if target.trim().is_empty() {
            return Err(self.error_at(target_at, ParseErrorKind::EmptyTarget));
        }
        self.expect(')')?;
        self.skip_ws();
        let params = if self.peek() == Some('{') { self.dict()? } else { BTreeMap::new() };
        Ok(SkillCall { skill, target, params })
    }

    fn dict(&mut self) -> PResult<BTreeMap<String, ParamValue>> {
        self.expect('{')?;
        let mut params = BTreeMap::new();
        loop {
            self.skip_ws();
            if self.eat('}') {
                return Ok(params);
            }
            let key_at = self.pos;
            let key = self.string()?;
            self.skip_ws();
            self.expect(':')?;
            self.skip_ws();
            let value = self.value(&key)?;
            if params.contains_key(&key) {
                return Err(self.error_at(key_at, ParseErrorKind::DuplicateParam(key)));
            }
            params.insert(key, value);
            self.skip_ws();
            if !self.eat(',') {
                self.skip_ws();
                self.expect('}')?;
                return Ok(params);
            }
        }
    }

    fn value(&mut self, key: &str) -> PResult<ParamValue> {
        match self.peek() {
            Some('"') => Ok(ParamValue::Text(self.string()?)),
            Some('[') => {
                self.bump();
                let mut values = Vec::new();
                loop {
                    self.skip_ws();
                    values.push(self.number()?);
                    self.skip_ws();
                    if self.eat(']') {
                        break;
                    }
                    self.expect(',')?;
                }
                Ok(ParamValue::from_numbers(key, values))
            }
            _ => Ok(ParamValue::Scalar(self.number()?)),
        }
    }

    fn number(&mut self) -> PResult<f64> {
        let start = self.pos;
        let negative = self.eat('-');
        self.skip_ws();
        if self.rest().starts_with("pi") && !self.rest()[2..].starts_with(is_ident_char) {
            self.pos += 2;
            let mut value = PI;
            let save = self.pos;
            self.skip_ws();
            if self.eat('/') {
                self.skip_ws();
                let k = self.decimal()?;
                if k == 0.0 {
                    return Err(self.error_at(save, ParseErrorKind::Syntax {
                        expected: "non-zero divisor".into(),
                    }));
                }
                value /= k;
            } else {
                self.pos = save;
            }
            return Ok(if negative { -value } else { value });
        }
        if negative {
            // re-read the sign as part of the literal
            self.pos = start;
        }
        self.decimal()
    }

    fn decimal(&mut self) -> PResult<f64> {
        let start = self.pos;
        self.eat('-');
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.bump();
            }
            p.pos > s
        };
        let int = digits(self);
        let mut frac = false;
        if self.eat('.') {
            frac = digits(self);
        }
        if !int && !frac {
            self.pos = start;
            return Err(self.expected("number"));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if !self.eat('+') {
                self.eat('-');
            }
            if !digits(self) {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error_at(start, ParseErrorKind::Syntax { expected: "finite number".into() })),
        }
    }

    fn string(&mut self) -> PResult<String> {
        if !self.eat('"') {
            return Err(self.expected("string"));
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.expected("closing `\"`")),
                Some('"') => return Ok(out),
                Some('\\') => {
                    let esc = match self.bump() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('/') => '/',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        _ => return Err(self.expected("escape sequence")),
                    };
                    out.push(esc);
                }
                Some(c) => out.push(c),
            }
        }
    }
}

pub fn parse_program(text: &str) -> Result<SkillSequence, ParseError> {
    parse_program_with(text, &SkillRegistry::builtin())
}

pub fn parse_program_with(text: &str, registry: &SkillRegistry) -> Result<SkillSequence, ParseError> {
    let calls = Parser::new(text, registry).program()?;
    Ok(SkillSequence::new(calls, Origin::Reference))
}

/// Parses a single call. Used by the graph dump reader.
pub fn parse_call(text: &str, registry: &SkillRegistry) -> Result<SkillCall, ParseError> {
    let mut p = Parser::new(text, registry);
    p.skip_ws();
    let call = p.call()?;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.expected("end of input"));
    }
    Ok(call)
}

/// Parses the `Skill("target"){params}` label used in graph dumps.
pub fn parse_node_label(text: &str, registry: &SkillRegistry) -> Result<SkillCall, ParseError> {
    let mut p = Parser::new(text, registry);
    p.skip_ws();
    let call = p.node_label()?;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.expected("end of input"));
    }
    Ok(call)
}

/// Renders a call in the graph dump label form.
pub fn node_label(call: &SkillCall) -> String {
    format!("{}({}){}", call.skill, quote(&call.target), render_params(&call.params))
}

/// Parses `{...}` parameter dictionaries on their own.
pub fn parse_params(text: &str) -> Result<BTreeMap<String, ParamValue>, ParseError> {
    let registry = SkillRegistry::builtin();
    let mut p = Parser::new(text, &registry);
    p.skip_ws();
    let params = p.dict()?;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.expected("end of input"));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Byte range `[start, end)` in the scanned text.
    pub span: [usize; 2],
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub sequence: SkillSequence,
    pub diagnostics: Vec<Diagnostic>,
}

/// Finds the next `Name(` anchor at or after `from` whose name is registered.
fn next_anchor(text: &str, from: usize, registry: &SkillRegistry) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        let c = bytes[i];
        let boundary = i == 0 || !is_ident_char(bytes[i - 1] as char);
        if boundary && (c.is_ascii_alphabetic() || c == b'_') {
            let mut j = i;
            while j < bytes.len() && is_ident_char(bytes[j] as char) {
                j += 1;
            }
            let mut k = j;
            while k < bytes.len() && (bytes[k] as char).is_ascii_whitespace() {
                k += 1;
            }
            if k < bytes.len() && bytes[k] == b'(' && registry.lookup(&text[i..j]).is_some() {
                return Some((i, j));
            }
            i = j;
        } else {
            i += 1;
        }
    }
    None
}

pub fn extract_from_noisy(text: &str) -> Extraction {
    extract_from_noisy_with(text, &SkillRegistry::builtin())
}

/// Scans arbitrary model output for registry-anchored calls. Calls that fail
/// to parse are reported and skipped; non-blank text between two recovered
/// calls is reported as an unparseable span. Prose before the first and
/// after the last recovered call is ignored.
pub fn extract_from_noisy_with(text: &str, registry: &SkillRegistry) -> Extraction {
    let mut calls = Vec::new();
    let mut diagnostics = Vec::new();
    let mut pos = 0;
    // end of the last recovered call, and of the last reported span after it
    let mut last_call_end: Option<usize> = None;
    let mut reported_until = 0;

    while let Some((start, name_end)) = next_anchor(text, pos, registry) {
        let mut parser = Parser::new(text, registry);
        parser.pos = start;
        match parser.call() {
            Ok(call) => {
                if let Some(prev) = last_call_end {
                    let gap_start = prev.max(reported_until);
                    if gap_start < start {
                        let gap = &text[gap_start..start];
                        let trimmed = gap.trim();
                        if !trimmed.is_empty() {
                            let lead = gap.len() - gap.trim_start().len();
                            let s = gap_start + lead;
                            diagnostics.push(Diagnostic {
                                span: [s, s + trimmed.len()],
                                reason: "unparseable text between calls".into(),
                            });
                        }
                    }
                }
                calls.push(call);
                last_call_end = Some(parser.pos);
                reported_until = parser.pos;
                pos = parser.pos;
            }
            Err(err) => {
                // the failed span runs up to the next anchor
                let end = match next_anchor(text, name_end, registry) {
                    Some((next, _)) => start + text[start..next].trim_end().len(),
                    None => err.offset.max(name_end).min(text.len()),
                };
                diagnostics.push(Diagnostic { span: [start, end], reason: err.kind.to_string() });
                reported_until = end.max(reported_until);
                pos = name_end;
            }
        }
    }
    Extraction { sequence: SkillSequence::new(calls, Origin::Prediction), diagnostics }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn render_number(v: f64) -> String {
    // Debug formatting is the shortest representation that round-trips.
    format!("{v:?}")
}

fn render_value(value: &ParamValue) -> String {
    let list = |vs: &[f64]| {
        let items: Vec<String> = vs.iter().map(|v| render_number(*v)).collect();
        format!("[{}]", items.join(", "))
    };
    match value {
        ParamValue::Scalar(v) => render_number(*v),
        ParamValue::Angles(v) | ParamValue::Position(v) => list(v),
        ParamValue::List(v) => list(v),
        ParamValue::Text(s) => quote(s),
    }
}

pub fn render_params(params: &BTreeMap<String, ParamValue>) -> String {
    let mut out = String::from("{");
    for (i, (key, value)) in params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}: {}", quote(key), render_value(value));
    }
    out.push('}');
    out
}

/// One call per line, parameters in key order.
pub fn canonical_string(seq: &SkillSequence) -> String {
    seq.calls.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}
