//! Thread-per-connection TCP service. Sessions share the immutable world
//! and never share mutable state.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use splatnav_core::env::{Env, EnvConfig, EnvWorld};

use crate::protocol::{error_reply, write_frame, Session};

#[derive(Clone)]
pub struct Service {
    world: Arc<EnvWorld>,
    config: EnvConfig,
}

impl Service {
    pub fn new(world: Arc<EnvWorld>, config: EnvConfig) -> splatnav_core::Result<Self> {
        config.validate()?;
        Ok(Service { world, config })
    }

    /// Runs one connection to completion.
    pub fn handle(&self, mut stream: TcpStream) {
        let peer = stream.peer_addr().map_or_else(|_| "?".to_string(), |a| a.to_string());
        let _ = stream.set_nodelay(true);
        let env = match Env::new(self.world.clone(), self.config.clone()) {
            Ok(e) => e,
            Err(e) => {
                let _ = write_frame(&mut stream, error_reply("internal", e.to_string()).to_string().as_bytes());
                return;
            }
        };
        if let Err(e) = Session::new(env).run(&mut stream) {
            eprintln!("connection {peer}: {e}");
        }
    }

    /// Accepts forever, one thread per connection.
    pub fn serve(&self, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            match stream {
                Ok(s) => {
                    let svc = self.clone();
                    thread::spawn(move || svc.handle(s));
                }
                Err(e) => eprintln!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    /// Binds `addr` and serves on a background thread. Returns the bound
    /// address, which resolves port 0.
    pub fn spawn(self, addr: &str) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let handle = thread::spawn(move || self.serve(listener));
        Ok((local, handle))
    }
}
