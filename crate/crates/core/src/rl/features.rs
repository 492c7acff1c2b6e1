//! Input encodings for the three networks.

/// Belief followed by a 0/1 flag per question (1 = already asked).
pub fn policy_input(probs: &[f64], asked: &[bool]) -> Vec<f64> {
    probs
        .iter()
        .copied()
        .chain(asked.iter().map(|&a| if a { 1.0 } else { 0.0 }))
        .collect()
}

pub fn value_input(probs: &[f64]) -> Vec<f64> {
    probs.to_vec()
}

/// Belief, one-hot question, multi-hot selected options (padded to
/// `max_options`), one-hot target concept.
pub fn reward_input(
    probs: &[f64],
    question: usize,
    num_questions: usize,
    selected: &[usize],
    max_options: usize,
    target: usize,
) -> Vec<f64> {
    let m = probs.len();
    let mut x = Vec::with_capacity(2 * m + num_questions + max_options);
    x.extend_from_slice(probs);
    x.extend((0..num_questions).map(|n| if n == question { 1.0 } else { 0.0 }));
    x.extend((0..max_options).map(|l| if selected.contains(&l) { 1.0 } else { 0.0 }));
    x.extend((0..m).map(|c| if c == target { 1.0 } else { 0.0 }));
    x
}

pub fn reward_input_dim(concepts: usize, questions: usize, max_options: usize) -> usize {
    2 * concepts + questions + max_options
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        assert_eq!(
            policy_input(&[0.5, 0.5], &[true, false, false]),
            vec![0.5, 0.5, 1.0, 0.0, 0.0]
        );
        let x = reward_input(&[0.2, 0.8], 1, 3, &[0, 2], 3, 0);
        assert_eq!(x, vec![0.2, 0.8, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(x.len(), reward_input_dim(2, 3, 3));
    }
}
