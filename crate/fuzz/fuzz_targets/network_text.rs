#![no_main]
use libfuzzer_sys::fuzz_target;

use eq20_core::nn::DenseNetwork;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = DenseNetwork::from_text(text) {
        let again = DenseNetwork::from_text(&net.to_text()).expect("serialized network reloads");
        assert_eq!(net.dims(), again.dims());
        assert_eq!(net.head(), again.head());
        if net.input_dim() <= 64 {
            let _ = net.forward(&vec![0.5; net.input_dim()], None);
        }
    }
});
