use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::{HeadConfig, TrainConfig};
use super::model::{loss, Mode, PreparedBatch};
use super::params::HeadParams;
use crate::ensemble::StackedTensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct TrainedHead<T> {
    pub params: HeadParams<T>,
    /// Loss of each epoch, measured before that epoch's update.
    pub loss_history: Vec<T>,
}

/// Trains a freshly initialized head on the whole support set as one batch
/// per epoch.
///
/// The support set is put in a canonical order (label, then feature bits)
/// before training, so the result does not depend on the order it is given in.
pub fn train_head<T: Real, U: Real>(
    support: &[(StackedTensor<U>, usize)],
    head_config: &HeadConfig,
    train_config: &TrainConfig,
) -> Result<TrainedHead<T>> {
    head_config.validate()?;
    train_config.validate()?;
    let n = head_config.n_classes;
    let mut seen = vec![false; n];
    for (_, label) in support {
        if *label >= n {
            return Err(Error::LabelOutOfRange { label: *label, n_classes: n });
        }
        seen[*label] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("support set has no sample of class {missing}")));
    }
    if support.len() < 2 {
        return Err(Error::Shape("training needs a support batch of at least 2".into()));
    }

    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, la) = &support[a];
        let (tb, lb) = &support[b];
        la.cmp(lb).then_with(|| {
            let bits = |t: &StackedTensor<U>| t.as_slice().iter().map(|v| v.to_bits_u64()).collect::<Vec<_>>();
            bits(ta).cmp(&bits(tb))
        })
    });
    let tensors: Vec<&StackedTensor<U>> = order.iter().map(|&i| &support[i].0).collect();
    let labels: Vec<usize> = order.iter().map(|&i| support[i].1).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut params = HeadParams::<T>::init(head_config, &mut rng);
    let batch = PreparedBatch::from_tensors(&tensors, head_config.conv_kernel)?;
    let first = tensors[0];
    if first.side() != head_config.input_side || first.channels() != head_config.input_channels {
        return Err(Error::Shape(format!(
            "support tensors are {s}x{s}x{c}, head expects {hs}x{hs}x{hc}",
            s = first.side(),
            c = first.channels(),
            hs = head_config.input_side,
            hc = head_config.input_channels
        )));
    }

    let mut adam = AdamState::new(
        &params,
        train_config.adam_beta1,
        train_config.adam_beta2,
        train_config.adam_epsilon,
    );
    let l2 = T::from_f64_lossy(head_config.l2_lambda);
    let mut loss_history = Vec::with_capacity(train_config.epochs);
    for _ in 0..train_config.epochs {
        let cache = params.forward_prepared(&batch, Mode::Train)?;
        loss_history.push(loss(cache.probs(), &labels, &params, l2)?);
        let grads = params.backward(&cache, &labels, l2)?;
        adam.step(&mut params, &grads, train_config.learning_rate)?;
    }
    Ok(TrainedHead { params, loss_history })
}
