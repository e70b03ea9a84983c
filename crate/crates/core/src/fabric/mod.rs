//! Edge fabric: service registry, `.edge.local` name resolution and
//! round-robin balancing over ready instances placed one hop behind the EPC.

mod dns;
mod health;
mod registry;
mod topology;

pub use dns::{
    build_query, parse_response, query_a, DnsReply, DnsResponder, RCODE_NOERROR, RCODE_NXDOMAIN,
    RCODE_REFUSED, RCODE_SERVFAIL,
};
pub use health::{probe_ready, DEFAULT_READINESS_PATH, PROBE_TIMEOUT};
pub use registry::{
    fqdn, strip_zone, validate_name, Endpoint, Fabric, FabricError, ServiceInfo, ServiceRecord,
    ZONE,
};
pub use topology::{Node, Topology};
