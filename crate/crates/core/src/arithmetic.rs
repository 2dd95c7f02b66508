//! Exhaustive binary arithmetic datasets.
//!
//! Operands are fixed-width unsigned integers (width 4 by default). Every
//! bit vector in this module is most-significant bit first, so the addition
//! `0110 + 1101` has input vector `(0,1,1,0,1,1,0,1)` and target `(1,0,0,1,1)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Sub,
}

impl Operator {
    pub const ALL: [Operator; 2] = [Operator::Add, Operator::Sub];

    /// Length of the answer vector for operands of the given width.
    pub fn output_dim(self, width: usize) -> usize {
        match self {
            Operator::Add => width + 1,
            Operator::Sub => width,
        }
    }

    /// Number of carry classes (0..=max carries).
    pub fn carry_classes(self, width: usize) -> usize {
        match self {
            Operator::Add => width + 1,
            // the most significant column can never borrow when a >= b
            Operator::Sub => width,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Sub => "sub",
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Sub => '-',
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "add" | "+" | "addition" => Ok(Operator::Add),
            "sub" | "-" | "subtraction" => Ok(Operator::Sub),
            other => Err(Error::Parse(format!("unknown operator `{other}`"))),
        }
    }
}

/// A fixed-width unsigned operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Operand {
    value: u32,
    width: usize,
}

impl Operand {
    pub fn new(value: u32, width: usize) -> Result<Self> {
        if width == 0 || width > 16 {
            return Err(Error::InvalidOperand(format!("unsupported width {width}")));
        }
        if value >= 1 << width {
            return Err(Error::InvalidOperand(format!(
                "{value} does not fit in {width} bits"
            )));
        }
        Ok(Self { value, width })
    }

    /// Four-bit operand.
    pub fn nibble(value: u32) -> Result<Self> {
        Self::new(value, DEFAULT_WIDTH)
    }

    /// Parse an MSB-first string of `0`/`1`; the width is the string length.
    pub fn from_bit_str(bits: &str) -> Result<Self> {
        let bits = bits.trim();
        if bits.is_empty() || !bits.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::InvalidOperand(format!("`{bits}` is not a bit string")));
        }
        let value = u32::from_str_radix(bits, 2)
            .map_err(|e| Error::InvalidOperand(format!("`{bits}`: {e}")))?;
        Self::new(value, bits.len())
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn width(self) -> usize {
        self.width
    }

    pub fn bits(self) -> Vec<u8> {
        to_bits(self.value, self.width)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&bit_string(&self.bits()))
    }
}

/// MSB-first bits of `value`, zero-padded to `width`.
pub fn to_bits(value: u32, width: usize) -> Vec<u8> {
    (0..width)
        .rev()
        .map(|i| ((value >> i) & 1) as u8)
        .collect()
}

pub fn from_bits(bits: &[u8]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | u32::from(b))
}

pub fn bit_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

/// One arithmetic problem with its exact answer and carry count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Operation {
    pub operator: Operator,
    pub a: Operand,
    pub b: Operand,
    /// `a.bits ++ b.bits`
    pub input: Vec<u8>,
    /// Answer bits, MSB first.
    pub target: Vec<u8>,
    pub carries: usize,
}

impl Operation {
    pub fn new(operator: Operator, a: Operand, b: Operand) -> Result<Self> {
        if a.width() != b.width() {
            return Err(Error::InvalidOperand(format!(
                "operand widths differ ({} vs {})",
                a.width(),
                b.width()
            )));
        }
        let width = a.width();
        let (result, carries) = match operator {
            Operator::Add => (a.value() + b.value(), count_carries_add(a, b)),
            Operator::Sub => (a.value() - b.value().min(a.value()), count_borrows_sub(a, b)?),
        };
        let mut input = a.bits();
        input.extend(b.bits());
        Ok(Self {
            operator,
            a,
            b,
            input,
            target: to_bits(result, operator.output_dim(width)),
            carries,
        })
    }

    pub fn width(&self) -> usize {
        self.a.width()
    }

    pub fn input_f64(&self) -> Vec<f64> {
        self.input.iter().map(|&b| f64::from(b)).collect()
    }

    pub fn target_f64(&self) -> Vec<f64> {
        self.target.iter().map(|&b| f64::from(b)).collect()
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}={}",
            self.a,
            self.operator.symbol(),
            self.b,
            bit_string(&self.target)
        )
    }
}

/// Columns whose carry-out is 1, processed least-significant first.
pub fn count_carries_add(a: Operand, b: Operand) -> usize {
    let width = a.width().max(b.width());
    let mut carry = 0;
    let mut count = 0;
    for i in 0..width {
        let column = ((a.value() >> i) & 1) + ((b.value() >> i) & 1) + carry;
        carry = u32::from(column >= 2);
        count += carry as usize;
    }
    count
}

/// Columns whose borrow-out is 1. Fails when `a < b`.
pub fn count_borrows_sub(a: Operand, b: Operand) -> Result<usize> {
    if a.value() < b.value() {
        return Err(Error::NegativeDifference {
            a: a.value(),
            b: b.value(),
        });
    }
    let width = a.width().max(b.width());
    let mut borrow = 0i32;
    let mut count = 0;
    for i in 0..width {
        let diff = ((a.value() >> i) & 1) as i32 - ((b.value() >> i) & 1) as i32 - borrow;
        borrow = i32::from(diff < 0);
        count += borrow as usize;
    }
    Ok(count)
}

/// All operations of one operator with nonnegative results, in (a, b) order.
pub fn enumerate_dataset(operator: Operator) -> Vec<Operation> {
    enumerate_dataset_with_width(operator, DEFAULT_WIDTH)
}

pub fn enumerate_dataset_with_width(operator: Operator, width: usize) -> Vec<Operation> {
    let max = 1u32 << width;
    let mut ops = Vec::new();
    for a in 0..max {
        for b in 0..max {
            if operator == Operator::Sub && a < b {
                continue;
            }
            let a = Operand::new(a, width).expect("value in range");
            let b = Operand::new(b, width).expect("value in range");
            ops.push(Operation::new(operator, a, b).expect("valid operation"));
        }
    }
    ops
}

/// All operations of one operator that need exactly `carries` carries.
#[derive(Debug, Clone, PartialEq)]
pub struct CarryDataset {
    pub operator: Operator,
    pub carries: usize,
    pub operations: Vec<Operation>,
}

impl CarryDataset {
    pub fn len(&self) -> usize {
        self.operations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operations.is_empty()
    }
}

/// Split a full enumeration into carry classes `0..=max`.
///
/// Every class up to the operator's maximum is present, even if empty.
pub fn partition_by_carries(ops: &[Operation]) -> Result<Vec<CarryDataset>> {
    let first = ops.first().ok_or(Error::EmptyInput("operation list"))?;
    let operator = first.operator;
    let width = first.width();
    if let Some(bad) = ops.iter().find(|op| op.operator != operator) {
        return Err(Error::InvalidOperand(format!(
            "mixed operators in dataset ({operator} and {})",
            bad.operator
        )));
    }
    let mut classes: BTreeMap<usize, Vec<Operation>> = (0..operator.carry_classes(width))
        .map(|c| (c, Vec::new()))
        .collect();
    for op in ops {
        classes.entry(op.carries).or_default().push(op.clone());
    }
    Ok(classes
        .into_iter()
        .map(|(carries, operations)| CarryDataset {
            operator,
            carries,
            operations,
        })
        .collect())
}

/// A shuffled per-participant problem set with a fixed quota per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSet {
    pub operator: Operator,
    pub per_class_quota: usize,
    pub problems: Vec<Operation>,
}

/// Sample `quota` problems per class without replacement. A class smaller
/// than the quota is used in full and topped up with uniformly chosen
/// duplicates from the same class.
pub fn sample_problem_set(datasets: &[CarryDataset], quota: usize, seed: u64) -> Result<ProblemSet> {
    if quota == 0 {
        return Err(Error::InvalidArgument("quota must be at least 1".into()));
    }
    let operator = datasets
        .first()
        .ok_or(Error::EmptyInput("carry datasets"))?
        .operator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(quota * datasets.len());
    for class in datasets {
        if class.is_empty() {
            return Err(Error::EmptyInput("carry class"));
        }
        let take = quota.min(class.len());
        problems.extend(
            class
                .operations
                .choose_multiple(&mut rng, take)
                .cloned(),
        );
        for _ in take..quota {
            problems.push(class.operations.choose(&mut rng).expect("nonempty").clone());
        }
    }
    problems.shuffle(&mut rng);
    Ok(ProblemSet {
        operator,
        per_class_quota: quota,
        problems,
    })
}

/// Write `a_bits,b_bits,op,z_bits,carries` rows with a header line.
pub fn write_dataset_csv<W: Write>(ops: &[Operation], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["a_bits", "b_bits", "op", "z_bits", "carries"])?;
    for op in ops {
        writer.write_record([
            op.a.to_string(),
            op.b.to_string(),
            op.operator.to_string(),
            bit_string(&op.target),
            op.carries.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nib(s: &str) -> Operand {
        Operand::from_bit_str(s).unwrap()
    }

    // Independent oracles: the carry into column i+1 is bit i+1 of
    // (a + b) ^ a ^ b; the borrow into column i+1 is bit i+1 of (a - b) ^ a ^ b.
    fn carry_word_oracle(a: u32, b: u32) -> usize {
        (((a + b) ^ a ^ b) >> 1).count_ones() as usize
    }

    fn borrow_word_oracle(a: u32, b: u32) -> usize {
        (((a - b) ^ a ^ b) >> 1).count_ones() as usize
    }

    #[test]
    fn carry_examples() {
        assert_eq!(count_carries_add(nib("0000"), nib("0000")), 0);
        assert_eq!(count_carries_add(nib("0110"), nib("1101")), 2);
        assert_eq!(count_carries_add(nib("1111"), nib("1111")), 4);
    }

    #[test]
    fn borrow_examples() {
        assert_eq!(count_borrows_sub(nib("0001"), nib("0000")).unwrap(), 0);
        assert_eq!(count_borrows_sub(nib("1000"), nib("0001")).unwrap(), 3);
        assert_eq!(count_borrows_sub(nib("1111"), nib("1111")).unwrap(), 0);
        assert!(matches!(
            count_borrows_sub(nib("0001"), nib("0010")),
            Err(Error::NegativeDifference { a: 1, b: 2 })
        ));
    }

    #[test]
    fn carry_counts_match_bitwise_oracle() {
        for op in enumerate_dataset(Operator::Add) {
            assert_eq!(op.carries, carry_word_oracle(op.a.value(), op.b.value()), "{op}");
        }
        for op in enumerate_dataset(Operator::Sub) {
            assert_eq!(op.carries, borrow_word_oracle(op.a.value(), op.b.value()), "{op}");
        }
    }

    #[test]
    fn targets_are_exact() {
        for op in enumerate_dataset(Operator::Add) {
            assert_eq!(op.target.len(), 5);
            assert_eq!(from_bits(&op.target), op.a.value() + op.b.value());
            assert!(op.carries <= 4);
        }
        for op in enumerate_dataset(Operator::Sub) {
            assert_eq!(op.target.len(), 4);
            assert_eq!(from_bits(&op.target), op.a.value() - op.b.value());
            assert!(op.carries <= 3);
        }
    }

    #[test]
    fn input_vector_matches_worked_example() {
        let op = Operation::new(Operator::Add, nib("0110"), nib("1101")).unwrap();
        assert_eq!(op.input, vec![0, 1, 1, 0, 1, 1, 0, 1]);
        assert_eq!(op.target, vec![1, 0, 0, 1, 1]);
        assert_eq!(op.to_string(), "0110+1101=10011");
    }

    #[test]
    fn dataset_sizes() {
        assert_eq!(enumerate_dataset(Operator::Add).len(), 256);
        let sub = enumerate_dataset(Operator::Sub);
        assert_eq!(sub.len(), 136);
        assert_eq!(sub.iter().filter(|op| op.carries == 3).count(), 9);
    }

    #[test]
    fn partition_is_exact() {
        for operator in Operator::ALL {
            let ops = enumerate_dataset(operator);
            let classes = partition_by_carries(&ops).unwrap();
            assert_eq!(classes.len(), operator.carry_classes(4));
            assert_eq!(classes.iter().map(CarryDataset::len).sum::<usize>(), ops.len());
            for class in &classes {
                assert!(class.operations.iter().all(|op| op.carries == class.carries));
            }
        }
        // class sizes frozen from the exhaustive enumeration
        let sizes = |op| {
            partition_by_carries(&enumerate_dataset(op))
                .unwrap()
                .iter()
                .map(CarryDataset::len)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(Operator::Add), vec![81, 54, 52, 42, 27]);
        assert_eq!(sizes(Operator::Sub), vec![81, 27, 19, 9]);
    }

    #[test]
    fn partition_rejects_empty() {
        assert!(matches!(partition_by_carries(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn problem_set_quotas() {
        let add = partition_by_carries(&enumerate_dataset(Operator::Add)).unwrap();
        let set = sample_problem_set(&add, 10, 1).unwrap();
        assert_eq!(set.problems.len(), 50);
        for c in 0..5 {
            let class: Vec<_> = set.problems.iter().filter(|p| p.carries == c).collect();
            assert_eq!(class.len(), 10);
            let mut uniq = class.clone();
            uniq.sort_by_key(|p| (p.a, p.b));
            uniq.dedup();
            assert_eq!(uniq.len(), 10);
        }

        let sub = partition_by_carries(&enumerate_dataset(Operator::Sub)).unwrap();
        for seed in 0..20 {
            let set = sample_problem_set(&sub, 10, seed).unwrap();
            assert_eq!(set.problems.len(), 40);
            let mut three: Vec<_> = set
                .problems
                .iter()
                .filter(|p| p.carries == 3)
                .map(|p| (p.a, p.b))
                .collect();
            assert_eq!(three.len(), 10);
            three.sort();
            three.dedup();
            assert_eq!(three.len(), 9, "exactly one duplicate in the 3-borrow class");
        }
    }

    #[test]
    fn problem_set_quota_one_is_distinct() {
        let sub = partition_by_carries(&enumerate_dataset(Operator::Sub)).unwrap();
        let set = sample_problem_set(&sub, 1, 3).unwrap();
        assert_eq!(set.problems.len(), 4);
        let mut classes: Vec<_> = set.problems.iter().map(|p| p.carries).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1, 2, 3]);
        assert!(sample_problem_set(&sub, 0, 3).is_err());
    }

    #[test]
    fn problem_set_is_seed_deterministic() {
        let add = partition_by_carries(&enumerate_dataset(Operator::Add)).unwrap();
        assert_eq!(
            sample_problem_set(&add, 10, 42).unwrap(),
            sample_problem_set(&add, 10, 42).unwrap()
        );
        assert_ne!(
            sample_problem_set(&add, 10, 42).unwrap(),
            sample_problem_set(&add, 10, 43).unwrap()
        );
    }

    #[test]
    fn csv_layout() {
        let ops = enumerate_dataset(Operator::Sub);
        let mut buf = Vec::new();
        write_dataset_csv(&ops, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a_bits,b_bits,op,z_bits,carries"));
        assert_eq!(lines.next(), Some("0000,0000,sub,0000,0"));
        assert_eq!(text.lines().count(), 137);
    }

    #[test]
    fn operand_validation() {
        assert!(Operand::nibble(16).is_err());
        assert!(Operand::from_bit_str("10a1").is_err());
        assert_eq!(Operand::from_bit_str("0110").unwrap().value(), 6);
        assert_eq!(Operand::nibble(6).unwrap().bits(), vec![0, 1, 1, 0]);
    }
}
