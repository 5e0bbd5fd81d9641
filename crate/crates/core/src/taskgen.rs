//! Verifiable multi-step reasoning tasks and verbose teacher traces.
//!
//! A task is a chain of integer arithmetic operations rendered as a word
//! problem; the gold answer is the exact result of the chain. The teacher
//! trace walks the chain with typed steps (decompose / derive / verify /
//! explore / restate) and is correct by construction: the derive steps alone
//! carry enough information to reproduce the answer, so dropping every other
//! step kind can never break correctness.

use crate::error::{CoreError, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Magnitude bound for every operand and intermediate value.
pub const VALUE_BOUND: i64 = 999;

/// The sampler keeps the running value inside a much tighter band than the
/// domain bound: a small fact table is what makes the chains learnable by a
/// model with under a hundred thousand parameters.
const WALK_BOUND: i64 = 30;

/// A procedurally generated verifiable reasoning problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub seed: u64,
    /// Number of chained arithmetic operations required to solve.
    pub difficulty: u32,
    pub question_text: String,
    /// Canonical integer string.
    pub gold_answer: String,
}

/// Tag carried by every reasoning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Decompose,
    Derive,
    Verify,
    Explore,
    Restate,
}

impl StepKind {
    pub const ALL: [StepKind; 5] = [
        StepKind::Decompose,
        StepKind::Derive,
        StepKind::Verify,
        StepKind::Explore,
        StepKind::Restate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Decompose => "decompose",
            StepKind::Derive => "derive",
            StepKind::Verify => "verify",
            StepKind::Explore => "explore",
            StepKind::Restate => "restate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Low,
    High,
}

/// An ordered list of typed reasoning steps ending in a final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherTrace {
    pub task_id: String,
    pub steps: Vec<(StepKind, String)>,
    pub answer: String,
    pub verbosity: Verbosity,
}

/// One arithmetic operation in a task's chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add(i64),
    Sub(i64),
    Mul(i64),
    Div(i64),
}

impl ArithOp {
    pub fn apply(&self, value: i64) -> Option<i64> {
        match *self {
            ArithOp::Add(a) => Some(value + a),
            ArithOp::Sub(a) => Some(value - a),
            ArithOp::Mul(a) => Some(value * a),
            ArithOp::Div(a) => {
                if a != 0 && value % a == 0 {
                    Some(value / a)
                } else {
                    None
                }
            }
        }
    }

    fn clause(&self) -> String {
        match *self {
            ArithOp::Add(a) => format!("add {a}"),
            ArithOp::Sub(a) => format!("subtract {a}"),
            ArithOp::Mul(a) => format!("multiply by {a}"),
            ArithOp::Div(a) => format!("divide by {a}"),
        }
    }

    fn symbol(&self) -> char {
        match self {
            ArithOp::Add(_) => '+',
            ArithOp::Sub(_) => '-',
            ArithOp::Mul(_) => '*',
            ArithOp::Div(_) => '/',
        }
    }

    fn operand(&self) -> i64 {
        match *self {
            ArithOp::Add(a) | ArithOp::Sub(a) | ArithOp::Mul(a) | ArithOp::Div(a) => a,
        }
    }
}

/// Generate the task for `(seed, difficulty)`. Pure: the same pair always
/// yields a byte-identical task.
pub fn generate_task(seed: u64, difficulty: u32) -> Result<Task> {
    if difficulty == 0 {
        return Err(CoreError::invalid("difficulty must be >= 1"));
    }
    let mut rng = rng::stream(seed, "taskgen", u64::from(difficulty));
    let start: i64 = rng.gen_range(-9..=9);
    let mut value = start;
    let mut ops = Vec::with_capacity(difficulty as usize);
    for _ in 0..difficulty {
        let op = pick_op(&mut rng, value);
        value = op.apply(value).expect("picked op is feasible");
        debug_assert!(value.abs() <= VALUE_BOUND);
        ops.push(op);
    }
    let question_text = render_question(start, &ops);
    Ok(Task {
        id: format!("t{seed:016x}-d{difficulty}"),
        seed,
        difficulty,
        question_text,
        gold_answer: value.to_string(),
    })
}

fn pick_op(rng: &mut impl Rng, value: i64) -> ArithOp {
    let mut kinds: Vec<u8> = Vec::with_capacity(4);
    if value + 2 <= WALK_BOUND {
        kinds.push(0); // add
    }
    if value - 2 >= -WALK_BOUND {
        kinds.push(1); // sub
    }
    if value.abs() * 2 <= WALK_BOUND {
        kinds.push(2); // mul
    }
    let divisors: Vec<i64> = (2..=9).filter(|d| value % d == 0).collect();
    if !divisors.is_empty() {
        kinds.push(3); // div
    }
    let kind = kinds[rng.gen_range(0..kinds.len())];
    match kind {
        0 => {
            let max = 9.min(WALK_BOUND - value);
            ArithOp::Add(rng.gen_range(2..=max.max(2)))
        }
        1 => {
            let max = 9.min(value + WALK_BOUND);
            ArithOp::Sub(rng.gen_range(2..=max.max(2)))
        }
        2 => {
            let max = if value == 0 { 9 } else { 9.min(WALK_BOUND / value.abs()) };
            ArithOp::Mul(rng.gen_range(2..=max.max(2)))
        }
        _ => ArithOp::Div(divisors[rng.gen_range(0..divisors.len())]),
    }
}

fn render_question(start: i64, ops: &[ArithOp]) -> String {
    let mut out = format!("start with {start}");
    for op in ops {
        out.push_str(" . ");
        out.push_str(&op.clause());
    }
    out.push_str(" . what is the result ?");
    out
}

/// Parse a question back into `(start, ops)`. The teacher and the replay
/// tooling read tasks exclusively through this parser, not through any state
/// kept by the generator.
pub fn parse_question(text: &str) -> Result<(i64, Vec<ArithOp>)> {
    let clauses: Vec<&str> = text.split(" . ").collect();
    if clauses.len() < 2 {
        return Err(CoreError::invalid(format!("malformed question: {text}")));
    }
    let start = clauses[0]
        .strip_prefix("start with ")
        .and_then(|s| s.trim().parse::<i64>().ok())
        .ok_or_else(|| CoreError::invalid(format!("malformed start clause: {}", clauses[0])))?;
    let mut ops = Vec::new();
    for clause in &clauses[1..clauses.len() - 1] {
        let words: Vec<&str> = clause.split_whitespace().collect();
        let op = match words.as_slice() {
            ["add", n] => ArithOp::Add(parse_int(n)?),
            ["subtract", n] => ArithOp::Sub(parse_int(n)?),
            ["multiply", "by", n] => ArithOp::Mul(parse_int(n)?),
            ["divide", "by", n] => ArithOp::Div(parse_int(n)?),
            _ => return Err(CoreError::invalid(format!("malformed clause: {clause}"))),
        };
        ops.push(op);
    }
    Ok((start, ops))
}

fn parse_int(s: &str) -> Result<i64> {
    s.parse::<i64>()
        .map_err(|_| CoreError::invalid(format!("bad integer: {s}")))
}

/// Recover `(seed, difficulty)` from a task id of the form `t{seed:016x}-d{n}`.
pub fn parse_task_id(id: &str) -> Result<(u64, u32)> {
    let bad = || CoreError::invalid(format!("malformed task id: {id}"));
    let rest = id.strip_prefix('t').ok_or_else(bad)?;
    let (seed_hex, difficulty) = rest.split_once("-d").ok_or_else(bad)?;
    let seed = u64::from_str_radix(seed_hex, 16).map_err(|_| bad())?;
    let difficulty = difficulty.parse::<u32>().map_err(|_| bad())?;
    Ok((seed, difficulty))
}

/// Regenerate the task a dataset record points at. Task ids carry the full
/// generator inputs, so records never need to duplicate question text.
pub fn task_from_id(id: &str) -> Result<Task> {
    let (seed, difficulty) = parse_task_id(id)?;
    generate_task(seed, difficulty)
}

/// Build the teacher's reasoning trace for a task.
///
/// Low verbosity emits one decompose step and one derive step per operation.
/// High verbosity pads the chain with verify, explore and restate steps whose
/// removal never changes the answer.
pub fn teacher_trace(task: &Task, verbosity: Verbosity) -> TeacherTrace {
    let (start, ops) = parse_question(&task.question_text).expect("valid task question");
    let mut steps: Vec<(StepKind, String)> = Vec::new();
    steps.push((
        StepKind::Decompose,
        format!("plan : start at {start} and apply {} operations", ops.len()),
    ));
    if verbosity == Verbosity::High {
        let explore = if task.seed % 2 == 0 {
            "explore : one could reorder the operations but the given order is kept"
        } else {
            "explore : a different grouping might shorten the chain yet we follow the listed steps"
        };
        steps.push((StepKind::Explore, explore.to_string()));
    }
    let mut value = start;
    for (i, op) in ops.iter().enumerate() {
        let next = op.apply(value).expect("valid task chain");
        let equation = format!("{value}{}{}={next}", op.symbol(), op.operand());
        steps.push((StepKind::Derive, format!("then {} : {equation}", op.clause())));
        if verbosity == Verbosity::High {
            let check = if i % 2 == 0 {
                format!("check : value {next} looks consistent")
            } else {
                format!("check : {equation} still holds")
            };
            steps.push((StepKind::Verify, check));
        }
        value = next;
    }
    if verbosity == Verbosity::High {
        steps.push((StepKind::Restate, format!("so the final result is {value}")));
    }
    TeacherTrace {
        task_id: task.id.clone(),
        steps,
        answer: value.to_string(),
        verbosity,
    }
}

/// Replay the derive steps of a trace and return the final value they reach.
///
/// Every derive step must carry an equation as its last whitespace chunk
/// (both the prose and the compacted forms do). The replay checks each
/// equation arithmetically and checks that consecutive equations chain, so a
/// successful replay proves the derive subsequence reaches its claimed
/// result. Returns `None` on any inconsistency.
pub fn replay_derives(steps: &[(StepKind, String)]) -> Option<i64> {
    let mut prev: Option<i64> = None;
    let mut result: Option<i64> = None;
    for (kind, text) in steps {
        if *kind != StepKind::Derive {
            continue;
        }
        let chunk = text.split_whitespace().last()?;
        let (lhs, op, rhs, res) = parse_equation(chunk)?;
        let computed = match op {
            '+' => lhs.checked_add(rhs)?,
            '-' => lhs.checked_sub(rhs)?,
            '*' => lhs.checked_mul(rhs)?,
            '/' => {
                if rhs == 0 || lhs % rhs != 0 {
                    return None;
                }
                lhs / rhs
            }
            _ => return None,
        };
        if computed != res {
            return None;
        }
        if let Some(p) = prev {
            if p != lhs {
                return None;
            }
        }
        prev = Some(res);
        result = Some(res);
    }
    result
}

/// Parse an equation chunk of the form `lhs op rhs = res` with no internal
/// whitespace, e.g. `-5*3=-15`.
fn parse_equation(chunk: &str) -> Option<(i64, char, i64, i64)> {
    let bytes = chunk.as_bytes();
    let mut pos = 0;
    let lhs = scan_int(bytes, &mut pos)?;
    let op = *bytes.get(pos)? as char;
    if !matches!(op, '+' | '-' | '*' | '/') {
        return None;
    }
    pos += 1;
    let rhs = scan_int(bytes, &mut pos)?;
    if *bytes.get(pos)? != b'=' {
        return None;
    }
    pos += 1;
    let res = scan_int(bytes, &mut pos)?;
    if pos != bytes.len() {
        return None;
    }
    Some((lhs, op, rhs, res))
}

fn scan_int(bytes: &[u8], pos: &mut usize) -> Option<i64> {
    let mut p = *pos;
    let negative = bytes.get(p) == Some(&b'-');
    if negative {
        p += 1;
    }
    let digits_start = p;
    while p < bytes.len() && bytes[p].is_ascii_digit() {
        p += 1;
    }
    if p == digits_start {
        return None;
    }
    let raw = std::str::from_utf8(&bytes[digits_start..p]).ok()?;
    let mut value: i64 = raw.parse().ok()?;
    if negative {
        value = -value;
    }
    *pos = p;
    Some(value)
}

/// Canonical comparison of a predicted answer against the gold answer.
///
/// Both sides are trimmed, leading zeros are stripped and `-0` normalizes to
/// `0`. An unparseable prediction is simply wrong, never an error: rollouts
/// must always be scoreable.
pub fn verify_answer(predicted: &str, gold: &str) -> bool {
    match (canonical_int(predicted), canonical_int(gold)) {
        (Some(p), Some(g)) => p == g,
        _ => false,
    }
}

fn canonical_int(s: &str) -> Option<String> {
    let t = s.trim();
    if t.is_empty() {
        return None;
    }
    let (negative, digits) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() {
        return Some("0".to_string());
    }
    Some(if negative {
        format!("-{stripped}")
    } else {
        stripped.to_string()
    })
}
