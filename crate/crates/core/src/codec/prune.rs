//! Global magnitude pruning of decoder and fusion weights.

use crate::error::{usage_err, Result};
use crate::model::DnervModel;
use crate::nn::{ParamEntry, ParamRole};

/// Parameters subject to pruning: weight tensors of the stored network.
pub fn is_prunable(e: &ParamEntry) -> bool {
    e.group.is_representation() && e.role == ParamRole::Weight
}

/// Survivor masks for a set of tensors pruned jointly: the `round(ratio·N)`
/// smallest magnitudes are dropped, ties broken by position.
pub fn magnitude_masks(tensors: &[&[f64]], ratio: f64) -> Result<Vec<Vec<bool>>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(usage_err!("prune ratio must be in [0, 1), got {ratio}"));
    }
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let survivors = ((1.0 - ratio) * total as f64).round() as usize;
    let mut order: Vec<(usize, usize)> = tensors
        .iter()
        .enumerate()
        .flat_map(|(t, vals)| (0..vals.len()).map(move |i| (t, i)))
        .collect();
    order.sort_by(|&(ta, ia), &(tb, ib)| {
        tensors[ta][ia]
            .abs()
            .total_cmp(&tensors[tb][ib].abs())
            .then((ta, ia).cmp(&(tb, ib)))
    });
    let mut masks: Vec<Vec<bool>> = tensors.iter().map(|t| vec![true; t.len()]).collect();
    for &(t, i) in &order[..total - survivors] {
        masks[t][i] = false;
    }
    Ok(masks)
}

/// Zeroes pruned weights in place. Returns one survivor mask per parameter
/// entry (`None` for entries that are not prunable).
pub fn prune(model: &mut DnervModel, ratio: f64) -> Result<Vec<Option<Vec<bool>>>> {
    let entries = model.params.entries();
    let ids: Vec<usize> = (0..entries.len()).filter(|&i| is_prunable(&entries[i])).collect();
    let views: Vec<&[f64]> = ids.iter().map(|&i| entries[i].value.data()).collect();
    let masks = magnitude_masks(&views, ratio)?;
    let mut out = vec![None; entries.len()];
    let entries = model.params.entries_mut();
    for (&i, mask) in ids.iter().zip(masks) {
        for (v, keep) in entries[i].value.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        out[i] = Some(mask);
    }
    Ok(out)
}
