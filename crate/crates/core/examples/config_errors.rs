//! Configs are TOML. Every error names the offending key and its line.

use apfl::config::parse_config_str;

fn main() {
    let cases = [
        "seed = 1\nprotocol = \"apfl\"\n[apfl]\nrefine_period = 5\n",
        "protocol = \"apfl\"\n",
        "seed = 1\n[link]\nupstream_bytes_per_sec = 16000\nasymmetry = -2\n",
        "seed = 1\n[apfl]\nbroadcast_mode = \"sometimes\"\n",
        "seed = 1\n[model]\nhidden = 16\nlearning_rate = 0.1\n",
    ];
    for text in cases {
        match parse_config_str(text) {
            Ok(cfg) => println!("ok: {} clients, protocol {}", cfg.client_count(), cfg.protocol.as_str()),
            Err(e) => println!("rejected: {e}"),
        }
    }
}
