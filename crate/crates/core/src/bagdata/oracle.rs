//! Exact weak-label rules for the three experiment constructions.

use crate::error::{Error, Result};

/// Latent label of an all-even level-1 bag / region without odd bags.
pub const EVEN: u8 = 0;
/// Latent label of an all-odd level-1 bag / region without even bags.
pub const ODD: u8 = 1;
/// Latent label of anything else.
pub const NEUTRAL: u8 = 2;

fn nonempty<T>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        Err(Error::Degenerate(format!("empty {what}")))
    } else {
        Ok(())
    }
}

/// Standard MIL rule: positive iff some instance belongs to `positive`.
pub fn oracle_exp1(labels: &[u8], positive: u8) -> Result<u8> {
    nonempty(labels, "bag")?;
    Ok(u8::from(labels.contains(&positive)))
}

/// Inner-bag counting rule. An inner bag is positive when it holds more
/// than one positive instance; the outer bag is positive when some inner
/// bag is. Returns the outer label and the inner labels.
pub fn oracle_exp2(bags: &[Vec<u8>], positive: u8) -> Result<(u8, Vec<u8>)> {
    nonempty(bags, "outer bag")?;
    let inner = bags
        .iter()
        .map(|bag| {
            nonempty(bag, "inner bag")?;
            Ok(u8::from(bag.iter().filter(|&&l| l == positive).count() > 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((u8::from(inner.contains(&1)), inner))
}

/// Parity label of a level-1 bag of digits.
pub fn parity_label(digits: &[u8]) -> Result<u8> {
    nonempty(digits, "level-1 bag")?;
    let odd = digits.iter().filter(|d| *d % 2 == 1).count();
    Ok(if odd == 0 {
        EVEN
    } else if odd == digits.len() {
        ODD
    } else {
        NEUTRAL
    })
}

/// Label of a region from the labels of its level-1 bags.
pub fn region_label(bag_labels: &[u8]) -> Result<u8> {
    nonempty(bag_labels, "region")?;
    let has_even = bag_labels.contains(&EVEN);
    let has_odd = bag_labels.contains(&ODD);
    Ok(match (has_even, has_odd) {
        (true, false) => EVEN,
        (false, true) => ODD,
        _ => NEUTRAL,
    })
}

/// Three-level parity rule over `regions[r][b][i]` digits. Returns the weak
/// label, the level-1 bag labels grouped by region and the region labels.
pub fn oracle_exp3(regions: &[Vec<Vec<u8>>]) -> Result<(u8, Vec<Vec<u8>>, Vec<u8>)> {
    if regions.is_empty() {
        return Err(Error::Structure("exp3 sample has no regions".into()));
    }
    let mut bag_labels = Vec::with_capacity(regions.len());
    let mut region_labels = Vec::with_capacity(regions.len());
    for region in regions {
        if region.is_empty() {
            return Err(Error::Structure("exp3 region has no level-1 bags".into()));
        }
        let labels = region
            .iter()
            .map(|bag| {
                parity_label(bag).map_err(|_| Error::Structure("exp3 level-1 bag is empty".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        region_labels.push(region_label(&labels)?);
        bag_labels.push(labels);
    }
    let y = u8::from(region_labels.contains(&ODD));
    Ok((y, bag_labels, region_labels))
}
