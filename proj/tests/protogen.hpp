#pragma once

// Random well-formed wire messages for round-trip and fuzz tests.

#include <cstring>

#include "sfl/protocol.hpp"
#include "sfl/random.hpp"

namespace sfl::testing {

// Finite values compare with ==; with `raw_bits` any pattern (NaN
// payloads included) is drawn and must be compared with bit_equal.
inline Tensor random_blob(Rng& rng, bool raw_bits = false) {
  Shape shape(1 + rng.index(3));
  for (auto& d : shape) d = 1 + rng.index(5);
  Tensor t(shape);
  for (float& v : t.values()) {
    if (raw_bits) {
      const auto bits = static_cast<std::uint32_t>(rng.next());
      std::memcpy(&v, &bits, sizeof v);
    } else {
      v = rng.uniform(-1e6f, 1e6f);
    }
  }
  return t;
}

inline std::vector<Tensor> random_blobs(Rng& rng) {
  std::vector<Tensor> out(rng.index(5));
  for (auto& t : out) t = random_blob(rng);
  return out;
}

inline wire::Message random_message(Rng& rng) {
  wire::Message m;
  m.round = static_cast<std::uint32_t>(rng.next());
  m.client_id = static_cast<std::uint16_t>(rng.next());
  switch (rng.index(8)) {
    case 0: m.payload = wire::Hello{static_cast<std::uint32_t>(rng.next())}; break;
    case 1: {
      wire::TrainConfig c;
      c.model_name = std::string(rng.index(20), 'a' + static_cast<char>(rng.index(26)));
      c.num_clients = static_cast<std::uint16_t>(rng.next());
      c.epochs = static_cast<std::uint32_t>(rng.next());
      c.learning_rate = rng.uniform01();
      c.momentum = rng.uniform01();
      c.seed = rng.next();
      c.aggregate = rng.index(2) == 1;
      m.payload = c;
      break;
    }
    case 2: m.payload = wire::ModelPush{random_blobs(rng)}; break;
    case 3: m.payload = wire::Activation{static_cast<std::uint8_t>(rng.next()), random_blob(rng)}; break;
    case 4: m.payload = wire::Gradient{random_blob(rng)}; break;
    case 5: m.payload = wire::ModelUpload{random_blobs(rng)}; break;
    case 6: m.payload = wire::RoundDone{}; break;
    default: m.payload = wire::Bye{}; break;
  }
  return m;
}

}  // namespace sfl::testing
