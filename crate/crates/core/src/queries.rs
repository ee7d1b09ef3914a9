//! Template grammar for referring expressions and the constraint matcher the
//! grounder scores candidates with.
//!
//! ```text
//! query     := ["the"] [size] [color] shape [spatial] [relation]
//! spatial   := "on the left" | "on the right" | "at the top" | "at the bottom" | "in the center"
//! relation  := predicate "the" [color] shape
//! predicate := ["to" "the"] "left of" | ["to" "the"] "right of" | "above" | "below"
//! ```
//!
//! Parsing is case-insensitive. A shape-less phrase such as `"the red"` is
//! accepted as long as at least one attribute is present.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::FrameBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Rectangle, Shape::Ellipse, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Orange,
    Purple,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Magenta,
        Color::Orange,
        Color::Purple,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::Orange => "orange",
            Color::Purple => "purple",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 30, 30],
            Color::Green => [30, 190, 60],
            Color::Blue => [40, 70, 220],
            Color::Yellow => [235, 220, 40],
            Color::Cyan => [40, 210, 220],
            Color::Magenta => [210, 40, 200],
            Color::Orange => [245, 140, 20],
            Color::Purple => [120, 40, 170],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeQualifier {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spatial {
    Left,
    Right,
    Top,
    Bottom,
    Center,
}

impl Spatial {
    pub const ALL: [Spatial; 5] = [Spatial::Left, Spatial::Right, Spatial::Top, Spatial::Bottom, Spatial::Center];

    fn phrase(self) -> &'static str {
        match self {
            Spatial::Left => "on the left",
            Spatial::Right => "on the right",
            Spatial::Top => "at the top",
            Spatial::Bottom => "at the bottom",
            Spatial::Center => "in the center",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Predicate {
    pub const ALL: [Predicate; 4] = [Predicate::LeftOf, Predicate::RightOf, Predicate::Above, Predicate::Below];

    fn phrase(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left of",
            Predicate::RightOf => "right of",
            Predicate::Above => "above",
            Predicate::Below => "below",
        }
    }

    fn holds(self, subject: (f64, f64), reference: (f64, f64)) -> bool {
        match self {
            Predicate::LeftOf => subject.0 < reference.0,
            Predicate::RightOf => subject.0 > reference.0,
            Predicate::Above => subject.1 < reference.1,
            Predicate::Below => subject.1 > reference.1,
        }
    }
}

/// The reference noun phrase of a relation. Its own relation is always absent,
/// which caps relation depth at one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reference {
    pub color: Option<Color>,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub predicate: Predicate,
    pub reference: Reference,
}

/// Attribute constraints extracted from a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<SizeQualifier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<Spatial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
}

impl ConstraintSet {
    pub fn kind(color: Color, shape: Shape) -> Self {
        ConstraintSet { color: Some(color), shape: Some(shape), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_none()
            && self.color.is_none()
            && self.size.is_none()
            && self.spatial.is_none()
            && self.relation.is_none()
    }

    fn constraint_count(&self) -> usize {
        [
            self.shape.is_some(),
            self.color.is_some(),
            self.size.is_some(),
            self.spatial.is_some(),
            self.relation.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }

    /// Renders the canonical query text; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut words: Vec<&str> = vec!["the"];
        if let Some(s) = self.size {
            words.push(match s {
                SizeQualifier::Small => "small",
                SizeQualifier::Large => "large",
            });
        }
        if let Some(c) = self.color {
            words.push(c.word());
        }
        if let Some(s) = self.shape {
            words.push(s.word());
        }
        if let Some(sp) = self.spatial {
            words.push(sp.phrase());
        }
        if let Some(rel) = self.relation {
            words.push(rel.predicate.phrase());
            words.push("the");
            if let Some(c) = rel.reference.color {
                words.push(c.word());
            }
            words.push(rel.reference.shape.word());
        }
        words.join(" ")
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("query does not constrain any attribute")]
    EmptyConstraint,
    #[error("unexpected token `{token}` at position {position}")]
    Unexpected { token: String, position: usize },
    #[error("query ended early: expected {0}")]
    Truncated(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    The,
    On,
    At,
    In,
    To,
    Of,
    Above,
    Below,
    Left,
    Right,
    Top,
    Bottom,
    Center,
    Size(SizeQualifier),
    Color(Color),
    Shape(Shape),
}

fn lex(word: &str) -> Option<Token> {
    let t = match word {
        "the" => Token::The,
        "on" => Token::On,
        "at" => Token::At,
        "in" => Token::In,
        "to" => Token::To,
        "of" => Token::Of,
        "above" => Token::Above,
        "below" => Token::Below,
        "left" => Token::Left,
        "right" => Token::Right,
        "top" => Token::Top,
        "bottom" => Token::Bottom,
        "center" => Token::Center,
        "small" => Token::Size(SizeQualifier::Small),
        "large" => Token::Size(SizeQualifier::Large),
        other => {
            if let Some(c) = Color::ALL.iter().find(|c| c.word() == other) {
                Token::Color(*c)
            } else if let Some(s) = Shape::ALL.iter().find(|s| s.word() == other) {
                Token::Shape(*s)
            } else {
                return None;
            }
        }
    };
    Some(t)
}

struct Cursor<'a> {
    words: &'a [String],
    tokens: Vec<Token>,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: Token) -> bool {
        if self.peek() == Some(want) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self) -> QueryError {
        QueryError::Unexpected { token: self.words[self.pos].clone(), position: self.pos }
    }

    fn expect(&mut self, want: Token, what: &'static str) -> Result<(), QueryError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(self.unexpected()),
            None => Err(QueryError::Truncated(what)),
        }
    }
}

/// Parses query text into a constraint set.
pub fn parse(text: &str) -> Result<ConstraintSet, QueryError> {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.trim_end_matches(['.', ',', '!', '?']).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    let mut tokens = Vec::with_capacity(words.len());
    for w in &words {
        tokens.push(lex(w).ok_or_else(|| QueryError::UnknownToken(w.clone()))?);
    }
    let mut cur = Cursor { words: &words, tokens, pos: 0 };
    let mut c = ConstraintSet::default();

    cur.eat(Token::The);
    if let Some(Token::Size(s)) = cur.peek() {
        c.size = Some(s);
        cur.bump();
    }
    if let Some(Token::Color(col)) = cur.peek() {
        c.color = Some(col);
        cur.bump();
    }
    if let Some(Token::Shape(s)) = cur.peek() {
        c.shape = Some(s);
        cur.bump();
    }

    // optional spatial phrase
    match cur.peek() {
        Some(Token::On) => {
            cur.bump();
            cur.expect(Token::The, "`the`")?;
            c.spatial = Some(match cur.bump() {
                Some(Token::Left) => Spatial::Left,
                Some(Token::Right) => Spatial::Right,
                Some(_) => {
                    cur.pos -= 1;
                    return Err(cur.unexpected());
                }
                None => return Err(QueryError::Truncated("`left` or `right`")),
            });
        }
        Some(Token::At) => {
            cur.bump();
            cur.expect(Token::The, "`the`")?;
            c.spatial = Some(match cur.bump() {
                Some(Token::Top) => Spatial::Top,
                Some(Token::Bottom) => Spatial::Bottom,
                Some(_) => {
                    cur.pos -= 1;
                    return Err(cur.unexpected());
                }
                None => return Err(QueryError::Truncated("`top` or `bottom`")),
            });
        }
        Some(Token::In) => {
            cur.bump();
            cur.expect(Token::The, "`the`")?;
            cur.expect(Token::Center, "`center`")?;
            c.spatial = Some(Spatial::Center);
        }
        _ => {}
    }

    // optional relation
    let predicate = match cur.peek() {
        Some(Token::To) => {
            cur.bump();
            cur.expect(Token::The, "`the`")?;
            Some(side_predicate(&mut cur)?)
        }
        Some(Token::Left) | Some(Token::Right) => Some(side_predicate(&mut cur)?),
        Some(Token::Above) => {
            cur.bump();
            Some(Predicate::Above)
        }
        Some(Token::Below) => {
            cur.bump();
            Some(Predicate::Below)
        }
        _ => None,
    };
    if let Some(predicate) = predicate {
        cur.expect(Token::The, "`the`")?;
        let color = match cur.peek() {
            Some(Token::Color(col)) => {
                cur.bump();
                Some(col)
            }
            _ => None,
        };
        let shape = match cur.bump() {
            Some(Token::Shape(s)) => s,
            Some(_) => {
                cur.pos -= 1;
                return Err(cur.unexpected());
            }
            None => return Err(QueryError::Truncated("a reference shape")),
        };
        c.relation = Some(Relation { predicate, reference: Reference { color, shape } });
    }

    if cur.peek().is_some() {
        return Err(cur.unexpected());
    }
    if c.is_empty() {
        return Err(QueryError::EmptyConstraint);
    }
    Ok(c)
}

fn side_predicate(cur: &mut Cursor<'_>) -> Result<Predicate, QueryError> {
    let p = match cur.bump() {
        Some(Token::Left) => Predicate::LeftOf,
        Some(Token::Right) => Predicate::RightOf,
        Some(_) => {
            cur.pos -= 1;
            return Err(cur.unexpected());
        }
        None => return Err(QueryError::Truncated("`left` or `right`")),
    };
    cur.expect(Token::Of, "`of`")?;
    Ok(p)
}

/// What the matcher needs to know about one object (true or perceived).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectView {
    pub shape: Shape,
    pub color: Color,
    /// Side of the bounding square in pixels.
    pub size: f64,
    pub center: (f64, f64),
}

/// Scene-level facts the qualifiers are evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct SceneContext<'a> {
    pub bounds: FrameBounds,
    pub median_size: f64,
    /// Every object in view, including the one being tested.
    pub objects: &'a [ObjectView],
}

/// Outcome of matching one object against a constraint set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub satisfied: bool,
    pub strength: f64,
}

fn in_region(s: Spatial, center: (f64, f64), bounds: FrameBounds) -> bool {
    let third_w = bounds.width as f64 / 3.0;
    let third_h = bounds.height as f64 / 3.0;
    let (x, y) = center;
    let mid_x = x >= third_w && x < 2.0 * third_w;
    let mid_y = y >= third_h && y < 2.0 * third_h;
    match s {
        Spatial::Left => x < third_w,
        Spatial::Right => x >= 2.0 * third_w,
        Spatial::Top => y < third_h,
        Spatial::Bottom => y >= 2.0 * third_h,
        Spatial::Center => mid_x && mid_y,
    }
}

fn reference_strength(r: &Reference, o: &ObjectView) -> f64 {
    let mut held = (o.shape == r.shape) as u32;
    let mut total = 1;
    if let Some(c) = r.color {
        total += 1;
        held += (o.color == c) as u32;
    }
    held as f64 / total as f64
}

/// Index of the object (other than `subject`) that best matches the
/// reference phrase; ties go to the lower index.
pub fn best_reference(r: &Reference, subject: usize, ctx: &SceneContext<'_>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in ctx.objects.iter().enumerate() {
        if i == subject {
            continue;
        }
        let s = reference_strength(r, o);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Matches the object at `subject` (an index into `ctx.objects`).
pub fn satisfies(c: &ConstraintSet, subject: usize, ctx: &SceneContext<'_>) -> Match {
    let o = &ctx.objects[subject];
    let total = c.constraint_count();
    if total == 0 {
        return Match { satisfied: false, strength: 0.0 };
    }
    let mut held = 0usize;
    if let Some(s) = c.shape {
        held += (o.shape == s) as usize;
    }
    if let Some(col) = c.color {
        held += (o.color == col) as usize;
    }
    if let Some(sz) = c.size {
        let ok = match sz {
            SizeQualifier::Small => o.size < ctx.median_size,
            SizeQualifier::Large => o.size > ctx.median_size,
        };
        held += ok as usize;
    }
    if let Some(sp) = c.spatial {
        held += in_region(sp, o.center, ctx.bounds) as usize;
    }
    if let Some(rel) = c.relation {
        let ok = best_reference(&rel.reference, subject, ctx)
            .map(|r| rel.predicate.holds(o.center, ctx.objects[r].center))
            .unwrap_or(false);
        held += ok as usize;
    }
    let satisfied = held == total;
    Match { satisfied, strength: held as f64 / total as f64 }
}

/// Number of objects that fully satisfy the constraint set.
pub fn count_satisfying(c: &ConstraintSet, ctx: &SceneContext<'_>) -> usize {
    (0..ctx.objects.len()).filter(|&i| satisfies(c, i, ctx).satisfied).count()
}

/// Median of the object sizes (mean of the middle pair for even counts).
pub fn median_size(sizes: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = sizes.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
