#include <doctest.h>

#include <thread>

#include "protogen.hpp"
#include "sfl/bytes.hpp"
#include "sfl/protocol.hpp"
#include "sfl/transport.hpp"

using namespace sfl;
using namespace sfl::wire;
using sfl::testing::random_message;

namespace {

std::vector<std::uint8_t> hex(std::string_view text) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i + 1 < text.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(std::stoi(std::string(text.substr(i, 2)), nullptr, 16)));
  return out;
}

ProtocolError::Kind decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode(bytes);
  } catch (const ProtocolError& e) {
    return e.kind();
  }
  FAIL("decode accepted a malformed frame");
  return ProtocolError::Kind::Unexpected;
}

}  // namespace

TEST_CASE("BYE frame bytes") {
  // Header assembled by hand; CRC-32 computed independently with Python zlib.
  const auto expected = hex("53464c310800000000000000000000958234e3");
  const auto frame = encode(Message{0, 0, Bye{}});
  CHECK(frame.size() == 19);
  CHECK(frame == expected);
  CHECK(decode(expected) == Message{0, 0, Bye{}});
}

TEST_CASE("HELLO frame bytes") {
  const auto expected = hex("53464c310100000000030004000000bc0200008bc66d86");
  CHECK(encode(Message{0, 3, Hello{700}}) == expected);
}

TEST_CASE("activation payload for the CNN cut") {
  Message m{2, 1, Activation{4, Tensor({12, 48, 11}, 0.5f)}};
  auto frame = encode(m);
  CHECK(encode_payload(m.payload).size() == 25358);
  CHECK(frame.size() == 25358 + kFrameOverhead);
  CHECK(activation_frame_size({12, 48, 11}) == frame.size());
  CHECK(frame_length(frame) == frame.size());
  CHECK(decode(frame) == m);
}

TEST_CASE("round trip over generated messages") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Message m = random_message(rng);
    const auto frame = encode(m);
    REQUIRE(decode(frame) == m);
  }
}

TEST_CASE("tensor blobs keep every bit pattern") {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Tensor t = sfl::testing::random_blob(rng, true);
    const auto back = decode(encode(Message{0, 0, Gradient{t}}));
    CHECK(std::get<Gradient>(back.payload).tensor.bit_equal(t));
  }
}

TEST_CASE("random bytes never crash the decoder") {
  Rng rng(3);
  int accepted = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::uint8_t> bytes(rng.index(64));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.next());
    // Half of the inputs get a valid magic so deeper checks are exercised.
    if (i % 2 == 0 && bytes.size() >= 4) std::copy_n("SFL1", 4, bytes.begin());
    try {
      decode(bytes);
      ++accepted;
    } catch (const ProtocolError&) {
    }
  }
  CHECK(accepted == 0);
}

TEST_CASE("mutated valid frames never crash the decoder") {
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) {
    auto frame = encode(random_message(rng));
    const std::size_t edits = 1 + rng.index(4);
    for (std::size_t e = 0; e < edits; ++e)
      frame[rng.index(frame.size())] = static_cast<std::uint8_t>(rng.next());
    if (rng.index(3) == 0) frame.resize(rng.index(frame.size() + 1));
    try {
      decode(frame);
    } catch (const ProtocolError&) {
    }
  }
}

TEST_CASE("every single-bit flip is detected") {
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    const auto frame = encode(random_message(rng));
    for (std::size_t bit = 0; bit < frame.size() * 8; ++bit) {
      auto bad = frame;
      bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      CHECK_THROWS_AS(decode(bad), ProtocolError);
    }
  }
  // Bits flipped inside the payload are reported as CRC failures.
  auto frame = encode(Message{1, 2, Gradient{Tensor({4}, 1.0f)}});
  frame[kHeaderSize + 6] ^= 0x10;
  CHECK(decode_error(frame) == ProtocolError::Kind::BadCrc);
}

TEST_CASE("distinct error kinds") {
  using K = ProtocolError::Kind;
  const auto good = encode(Message{1, 2, Hello{5}});

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(decode_error(bad_magic) == K::BadMagic);

  CHECK(decode_error(std::span(good).first(10)) == K::Truncated);
  CHECK(decode_error(std::span(good).first(good.size() - 1)) == K::Truncated);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_error(trailing) == K::LengthMismatch);

  // Re-sealed frames (valid CRC) with semantic defects.
  auto reseal = [](std::vector<std::uint8_t> f) {
    f.resize(f.size() - 4);
    ByteWriter w;
    w.raw(f);
    w.u32(crc32(f));
    return w.take();
  };
  auto unknown = good;
  unknown[4] = 42;
  CHECK(decode_error(reseal(unknown)) == K::UnknownType);

  // HELLO with a 3-byte payload (plus a placeholder CRC).
  auto short_hello = hex("53464c310100000000000003000000010203" "00000000");
  CHECK(decode_error(reseal(short_hello)) == K::LengthMismatch);

  // GRADIENT whose blob claims more floats than the payload carries.
  ByteWriter w;
  w.raw(std::string_view("SFL1"));
  w.u8(5);
  w.u32(0);
  w.u16(0);
  w.u32(1 + 4 + 4);
  w.u8(1);
  w.u32(1000);
  w.f32(1.0f);
  w.u32(crc32(w.buffer()));
  CHECK(decode_error(w.buffer()) == K::LengthMismatch);

  ByteWriter big;
  big.raw(std::string_view("SFL1"));
  big.u8(3);
  big.u32(0);
  big.u16(0);
  big.u32(0xffffffffu);
  CHECK(decode_error(big.buffer()) == K::Oversized);
}

TEST_CASE("frame reader splits an arbitrarily chunked stream") {
  Rng rng(6);
  std::vector<Message> sent;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 200; ++i) {
    sent.push_back(random_message(rng));
    auto f = encode(sent.back());
    stream.insert(stream.end(), f.begin(), f.end());
  }
  FrameReader reader;
  std::vector<Message> got;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::min(stream.size() - pos, 1 + rng.index(300));
    reader.feed(std::span(stream).subspan(pos, n));
    pos += n;
    while (auto frame = reader.next()) got.push_back(decode(*frame));
  }
  CHECK(reader.buffered() == 0);
  CHECK(got == sent);
}

TEST_CASE("frame reader rejects garbage early") {
  FrameReader reader;
  const std::uint8_t junk[] = {'S', 'F', 'X'};
  reader.feed(junk);
  CHECK_THROWS_AS(reader.next(), ProtocolError);
}

TEST_CASE("in-process transport counts bytes and reports closure") {
  auto [a, b] = make_in_process_pair();
  const Message m{3, 1, Activation{2, Tensor({25}, 1.0f)}};
  a->send_message(m);
  CHECK(b->receive_message() == m);
  CHECK(a->bytes_sent() == encode(m).size());
  CHECK(b->bytes_received() == encode(m).size());
  a.reset();
  CHECK_THROWS_AS(b->receive(), TransportClosed);
}

TEST_CASE("tcp transport over loopback") {
  TcpListener listener("127.0.0.1", 0);
  REQUIRE(listener.port() != 0);
  Rng rng(7);
  std::vector<Message> msgs;
  for (int i = 0; i < 50; ++i) msgs.push_back(random_message(rng));
  msgs.push_back(Message{0, 0, Activation{1, Tensor({12, 48, 11}, 2.0f)}});

  std::thread client([&] {
    auto link = connect_tcp("127.0.0.1", listener.port());
    for (const auto& m : msgs) link->send_message(m);
    auto echo = link->receive_message();
    CHECK(echo == msgs.front());
  });
  auto server = listener.accept();
  for (const auto& m : msgs) CHECK(server->receive_message() == m);
  server->send_message(msgs.front());
  client.join();
  CHECK_THROWS_AS(server->receive(), TransportClosed);
}

TEST_CASE("binding a busy port gives an actionable error") {
  TcpListener first("127.0.0.1", 0);
  try {
    TcpListener second("127.0.0.1", first.port());
    FAIL("second bind succeeded");
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find("already in use") != std::string::npos);
  }
}
