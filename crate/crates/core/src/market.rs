//! Post-hoc settlement of one slot's trades: seller surpluses are matched
//! with buyer deficits among the microgrids first, and only the residual is
//! routed to the main grid.
//!
//! Settlement is bookkeeping, not economics: every counterparty trades at
//! the same global price, so a microgrid's reward is identical whether its
//! energy moves to a peer or to the main grid. The ledger exists to record
//! who supplied whom.
//!
//! Peer supply is matched to peer demand proportionally to each side's
//! requested volume. Allocations are kept integral by largest-remainder
//! rounding (ties to the lower microgrid id), which is deterministic,
//! order-independent and conserves energy exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Money, Units};

/// A counterparty on the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Microgrid(usize),
    MainGrid,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Microgrid(id) => write!(f, "mg{id}"),
            Party::MainGrid => write!(f, "main-grid"),
        }
    }
}

/// A directed energy transfer within one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub seller: Party,
    pub buyer: Party,
    pub units: Units,
}

/// The full ledger of one slot: all flows settle at the slot's price.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub slot: u32,
    pub price: Money,
    pub flows: Vec<Flow>,
}

impl SettlementRecord {
    /// Total energy moved between microgrids.
    pub fn peer_volume(&self) -> Units {
        self.flows
            .iter()
            .filter(|f| f.seller != Party::MainGrid && f.buyer != Party::MainGrid)
            .map(|f| f.units)
            .sum()
    }

    /// Total energy absorbed by or drawn from the main grid.
    pub fn main_grid_volume(&self) -> Units {
        self.flows
            .iter()
            .filter(|f| f.seller == Party::MainGrid || f.buyer == Party::MainGrid)
            .map(|f| f.units)
            .sum()
    }

    /// Net position of one microgrid: sold minus bought. Equals the net
    /// trade it was settled with.
    pub fn net_position(&self, id: usize) -> Units {
        let party = Party::Microgrid(id);
        self.flows
            .iter()
            .map(|f| {
                if f.seller == party {
                    f.units
                } else if f.buyer == party {
                    -f.units
                } else {
                    0
                }
            })
            .sum()
    }
}

/// Splits `total` across parties proportionally to their (positive)
/// volumes, exactly: floors of the proportional shares, with the leftover
/// units going to the largest fractional remainders, ties to the lower id.
fn largest_remainder_split(volumes: &[(usize, Units)], total: Units) -> Vec<(usize, Units)> {
    let whole: i128 = volumes.iter().map(|&(_, v)| v as i128).sum();
    debug_assert!(total as i128 <= whole);
    if total == 0 || whole == 0 {
        return volumes.iter().map(|&(id, _)| (id, 0)).collect();
    }
    let mut shares: Vec<(usize, Units)> = Vec::with_capacity(volumes.len());
    let mut remainders: Vec<(i128, usize)> = Vec::with_capacity(volumes.len());
    let mut assigned: i128 = 0;
    for (k, &(id, v)) in volumes.iter().enumerate() {
        let numer = v as i128 * total as i128;
        let floor = numer / whole;
        assigned += floor;
        shares.push((id, floor as Units));
        remainders.push((numer % whole, k));
    }
    let mut leftover = total as i128 - assigned;
    // stable order: biggest remainder first, then lower microgrid id
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(volumes[a.1].0.cmp(&volumes[b.1].0)));
    for &(_, k) in &remainders {
        if leftover == 0 {
            break;
        }
        shares[k].1 += 1;
        leftover -= 1;
    }
    debug_assert_eq!(leftover, 0);
    shares
}

/// Settles one slot. `net_trades[i]` is microgrid `i`'s net trade `u + v`:
/// positive sells, negative buys, zero sits out.
pub fn settle(net_trades: &[Units], slot: u32, price: Money) -> SettlementRecord {
    let sellers: Vec<(usize, Units)> = net_trades
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t > 0)
        .map(|(id, &t)| (id, t))
        .collect();
    let buyers: Vec<(usize, Units)> = net_trades
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t < 0)
        .map(|(id, &t)| (id, -t))
        .collect();
    let supply: Units = sellers.iter().map(|&(_, v)| v).sum();
    let demand: Units = buyers.iter().map(|&(_, v)| v).sum();
    let matched = supply.min(demand);

    let seller_peer = largest_remainder_split(&sellers, matched);
    let buyer_peer = largest_remainder_split(&buyers, matched);

    let mut flows = Vec::new();

    // pair the two allocations by sweeping both id-ordered lists
    let mut bi = 0;
    let mut buyer_left = buyer_peer.first().map(|&(_, q)| q).unwrap_or(0);
    for &(seller, mut remaining) in &seller_peer {
        while remaining > 0 {
            if buyer_left == 0 {
                bi += 1;
                buyer_left = buyer_peer[bi].1;
                continue;
            }
            let units = remaining.min(buyer_left);
            flows.push(Flow {
                seller: Party::Microgrid(seller),
                buyer: Party::Microgrid(buyer_peer[bi].0),
                units,
            });
            remaining -= units;
            buyer_left -= units;
        }
    }

    // residual supply and demand settle against the main grid
    for (&(id, volume), &(_, peer)) in sellers.iter().zip(&seller_peer) {
        if volume > peer {
            flows.push(Flow {
                seller: Party::Microgrid(id),
                buyer: Party::MainGrid,
                units: volume - peer,
            });
        }
    }
    for (&(id, volume), &(_, peer)) in buyers.iter().zip(&buyer_peer) {
        if volume > peer {
            flows.push(Flow {
                seller: Party::MainGrid,
                buyer: Party::Microgrid(id),
                units: volume - peer,
            });
        }
    }

    SettlementRecord { slot, price, flows }
}
