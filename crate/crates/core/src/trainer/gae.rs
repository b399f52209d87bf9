/// Generalized advantage estimates and returns (`A + V`) for one rollout.
///
/// `dones[t]` marks that step `t` ended its episode, so nothing is bootstrapped
/// across it; `bootstrap` is the value of the state following the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "rollout arrays must have equal length");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { *a - mean };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rewards_and_values_give_zero_advantage() {
        let (a, r) = compute_gae(&[0.0; 5], &[0.0; 5], &[false, false, true, false, false], 0.0, 0.99, 0.95);
        assert!(a.iter().chain(&r).all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, -0.5, 2.0, 0.3];
        let v = [0.2, 0.1, -0.3, 0.4];
        let d = [false, true, false, false];
        let (a, _) = compute_gae(&r, &v, &d, 0.7, 0.9, 0.0);
        let expected = [1.0 + 0.9 * 0.1 - 0.2, -0.5 - 0.1, 2.0 + 0.9 * 0.4 + 0.3, 0.3 + 0.9 * 0.7 - 0.4];
        for (x, y) in a.iter().zip(expected) {
            assert_eq!(*x, y);
        }
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let r = [0.5, 1.5, -1.0, 2.0];
        let v = [0.3, -0.2, 0.8, 0.1];
        let (a, ret) = compute_gae(&r, &v, &[false, false, false, true], 123.0, 1.0, 1.0);
        for t in 0..4 {
            let mc: f64 = r[t..].iter().sum();
            assert!((a[t] - (mc - v[t])).abs() < 1e-12);
            assert!((ret[t] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_moments() {
        let mut a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 64.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-4);
    }
}
