use std::net::SocketAddrV4;
use std::time::Duration;

pub const DEFAULT_READINESS_PATH: &str = "/healthz";
pub const PROBE_TIMEOUT: Duration = Duration::from_secs(1);

/// One readiness probe: an HTTP GET answered with 200 within the timeout.
pub fn probe_ready(address: SocketAddrV4, path: &str) -> bool {
    let agent = ureq::AgentBuilder::new().timeout(PROBE_TIMEOUT).build();
    let url = format!("http://{address}{path}");
    matches!(agent.get(&url).call(), Ok(resp) if resp.status() == 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;
    use std::thread;

    fn serve_once(status: u16) -> SocketAddrV4 {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(std::net::SocketAddr::V4(a)) => a,
            other => panic!("unexpected listen address {other:?}"),
        };
        thread::spawn(move || {
            if let Ok(req) = server.recv() {
                let _ =
                    req.respond(tiny_http::Response::from_string("ok").with_status_code(status));
            }
        });
        addr
    }

    #[test]
    fn ok_is_ready() {
        assert!(probe_ready(serve_once(200), DEFAULT_READINESS_PATH));
    }

    #[test]
    fn non_200_is_not_ready() {
        assert!(!probe_ready(serve_once(503), DEFAULT_READINESS_PATH));
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = match listener.local_addr().unwrap() {
            std::net::SocketAddr::V4(a) => a,
            _ => unreachable!(),
        };
        let start = std::time::Instant::now();
        assert!(!probe_ready(addr, "/healthz"));
        assert!(start.elapsed() < Duration::from_secs(3));
        drop(listener);
    }

    #[test]
    fn closed_port_is_not_ready() {
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            match l.local_addr().unwrap() {
                std::net::SocketAddr::V4(a) => a,
                _ => unreachable!(),
            }
        };
        assert!(!probe_ready(addr, "/healthz"));
    }
}
