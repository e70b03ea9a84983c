use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

/// UE address pool carved from one IPv4 block. The network, broadcast and
/// gateway (first host) addresses are never handed out; allocation is
/// first-fit from the lowest free address.
#[derive(Debug, Clone)]
pub struct IpPool {
    net: Ipv4Net,
    gateway: Ipv4Addr,
    allocated: BTreeSet<Ipv4Addr>,
}

impl IpPool {
    /// Returns `None` when the block leaves no allocatable address.
    pub fn new(net: Ipv4Net) -> Option<Self> {
        let net = net.trunc();
        let first = u32::from(net.network());
        let last = u32::from(net.broadcast());
        // need network, gateway, broadcast and at least one host
        if last.checked_sub(first)? < 3 {
            return None;
        }
        Some(IpPool {
            net,
            gateway: Ipv4Addr::from(first + 1),
            allocated: BTreeSet::new(),
        })
    }

    pub fn network(&self) -> Ipv4Net {
        self.net
    }

    pub fn gateway(&self) -> Ipv4Addr {
        self.gateway
    }

    pub fn is_reserved(&self, ip: Ipv4Addr) -> bool {
        ip == self.net.network() || ip == self.net.broadcast() || ip == self.gateway
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.net.contains(&ip)
    }

    pub fn capacity(&self) -> usize {
        (u32::from(self.net.broadcast()) - u32::from(self.net.network()) + 1 - 3) as usize
    }

    pub fn in_use(&self) -> usize {
        self.allocated.len()
    }

    pub fn is_allocated(&self, ip: Ipv4Addr) -> bool {
        self.allocated.contains(&ip)
    }

    pub fn allocate(&mut self) -> Option<Ipv4Addr> {
        let start = u32::from(self.gateway) + 1;
        let end = u32::from(self.net.broadcast());
        let ip = (start..end)
            .map(Ipv4Addr::from)
            .find(|ip| !self.allocated.contains(ip))?;
        self.allocated.insert(ip);
        Some(ip)
    }

    /// Returns false if the address was not allocated.
    pub fn release(&mut self, ip: Ipv4Addr) -> bool {
        self.allocated.remove(&ip)
    }
}
