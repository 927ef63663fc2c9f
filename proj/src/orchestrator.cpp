#include "sfl/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "sfl/export.hpp"

namespace sfl {
namespace {

using wire::Message;
using wire::ProtocolError;

std::vector<Tensor> copy_params(std::span<const Layer> layers) {
  std::vector<Tensor> out;
  for (const Tensor* t : parameters(layers)) out.push_back(*t);
  return out;
}

void load_params(std::span<Layer> layers, std::span<const Tensor> values) {
  auto slots = parameters(layers);
  if (slots.size() != values.size())
    throw DimensionError("expected " + std::to_string(slots.size()) +
                         " parameter tensors, got " + std::to_string(values.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]->shape() != values[i].shape())
      throw DimensionError("parameter " + std::to_string(i) + " has shape " +
                           shape_to_string(values[i].shape()) + ", expected " +
                           shape_to_string(slots[i]->shape()));
    *slots[i] = values[i];
  }
}

// Full model from client-half parameters and server layers.
ModelSpec assemble(ModelName name, std::span<const Tensor> client_params,
                   const std::vector<Layer>& server) {
  ModelSpec spec = build(name);
  load_params(std::span<Layer>(spec.layers).first(spec.split_index), client_params);
  std::copy(server.begin(), server.end(), spec.layers.begin() +
                                              static_cast<std::ptrdiff_t>(spec.split_index));
  return spec;
}

SgdState make_optimizer(std::span<const Layer> layers, const TrainingConfig& cfg) {
  auto params = parameters(layers);
  return SgdState::zeros_like(params, cfg.effective_learning_rate(), cfg.momentum);
}

struct StepOutcome {
  float loss;
  bool correct;
};

// One plain SGD step of a full (unsplit) model on one sample.
// `grads` is scratch space aligned with parameters(layers).
StepOutcome train_step(std::vector<Layer>& layers, SgdState& opt, std::vector<Tensor>& grads,
                       const Tensor& input, std::uint8_t label) {
  const ForwardTrace trace = forward_all(layers, input);
  const LossResult loss = softmax_cross_entropy(trace.output, label);
  const bool correct = argmax(trace.output) == label;
  backward_accumulate(layers, trace, loss.grad_logits, grads, GradientMode::Overwrite);
  sgd_step(parameters(std::span<Layer>(layers)), grads, opt);
  return {loss.loss, correct};
}

std::vector<Tensor> gradient_buffers(std::span<const Layer> layers) {
  std::vector<Tensor> out;
  for (const Tensor* p : parameters(layers)) out.emplace_back(p->shape());
  return out;
}

[[noreturn]] void unexpected(const Message& msg, std::string_view wanted,
                             std::string_view where) {
  throw ProtocolError(ProtocolError::Kind::Unexpected,
                      std::string(where) + ": expected " + std::string(wanted) +
                          ", got " + std::string(wire::to_string(msg.type())) +
                          " (client " + std::to_string(msg.client_id) + ", round " +
                          std::to_string(msg.round) + ")");
}

template <typename T>
const T& expect(const Message& msg, std::string_view wanted, std::string_view where) {
  if (const T* p = std::get_if<T>(&msg.payload)) return *p;
  unexpected(msg, wanted, where);
}

Message receive_from(Transport& link, std::size_t client, const std::string& context) {
  try {
    return link.receive_message();
  } catch (const TransportClosed& e) {
    throw TransportClosed("client " + std::to_string(client) +
                          " disconnected " + context + ": " + e.what());
  }
}

std::size_t frame_size(const wire::Payload& payload) {
  return wire::kFrameOverhead + wire::encode_payload(payload).size();
}

void attach_validation(TrainResult& result, std::size_t first_row, double acc) {
  result.epoch_val_accuracy.push_back(acc);
  if (result.history.size() <= first_row) return;
  const std::size_t last_step = result.history.back().step;
  for (std::size_t i = first_row; i < result.history.size(); ++i)
    if (result.history[i].step == last_step) result.history[i].val_accuracy = acc;
}

void check_shards(const TrainingConfig& cfg, std::span<const Dataset> shards) {
  cfg.validate();
  if (shards.size() != cfg.num_clients)
    throw std::invalid_argument("got " + std::to_string(shards.size()) +
                                " shards for " + std::to_string(cfg.num_clients) +
                                " clients");
}

}  // namespace

std::string_view to_string(TransportKind kind) {
  switch (kind) {
    case TransportKind::InProcess: return "inprocess";
    case TransportKind::InProcessThreaded: return "threads";
    case TransportKind::Tcp: return "tcp";
  }
  return "unknown";
}

TransportKind parse_transport_kind(std::string_view text) {
  if (text == "inprocess") return TransportKind::InProcess;
  if (text == "threads") return TransportKind::InProcessThreaded;
  if (text == "tcp") return TransportKind::Tcp;
  throw std::invalid_argument("unknown transport '" + std::string(text) +
                              "' (expected inprocess, threads or tcp)");
}

float default_learning_rate(ModelName model) {
  return family_of(model) == ModelFamily::Mlp ? 0.0005f : 0.005f;
}

void TrainingConfig::validate() const {
  if (num_clients < 1 || num_clients > 0xffff)
    throw std::invalid_argument("number of clients must be in [1, 65535]");
  if (epochs < 1 || epochs > 0xffffffffu)
    throw std::invalid_argument("epochs must be at least 1");
  const float lr = effective_learning_rate();
  if (!std::isfinite(lr) || !(lr > 0.0f))
    throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f))
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(val_split >= 0.0 && val_split < 1.0))
    throw std::invalid_argument("validation split must be in [0, 1)");
}

std::vector<Tensor> aggregate(std::span<const std::vector<Tensor>> client_params) {
  if (client_params.empty())
    throw std::invalid_argument("cannot aggregate zero client models");
  const auto& first = client_params.front();
  for (const auto& other : client_params)
    if (other.size() != first.size())
      throw DimensionError("client models have different tensor counts");
  if (client_params.size() == 1) return first;

  const std::size_t m = client_params.size();
  std::vector<Tensor> out;
  std::vector<float> column(m);
  for (std::size_t t = 0; t < first.size(); ++t) {
    for (const auto& other : client_params)
      if (other[t].shape() != first[t].shape())
        throw DimensionError("client models disagree on the shape of tensor " +
                             std::to_string(t));
    Tensor mean(first[t].shape());
    for (std::size_t j = 0; j < mean.size(); ++j) {
      for (std::size_t c = 0; c < m; ++c) column[c] = client_params[c][t][j];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (float v : column) sum += v;
      mean[j] = static_cast<float>(sum / static_cast<double>(m));
    }
    out.push_back(std::move(mean));
  }
  return out;
}

double evaluate(const ModelSpec& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  for (const auto& s : data.samples)
    if (argmax(infer(model.layers, model_input(model, s.features))) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Client

ClientSession::ClientSession(std::uint16_t client_id, Dataset shard)
    : id_(client_id), shard_(std::move(shard)) {
  if (shard_.size() > 0xffffffffu)
    throw std::invalid_argument("shard too large for the HELLO message");
}

Message ClientSession::hello() const {
  return Message{0, id_, wire::Hello{static_cast<std::uint32_t>(shard_.size())}};
}

void ClientSession::expect_config(const char* what) const {
  if (!config_)
    throw ProtocolError(ProtocolError::Kind::Unexpected,
                        std::string(what) + " before TRAIN_CONFIG");
}

Message ClientSession::next_activation() {
  const Sample& sample = shard_.samples[order_[position_]];
  pending_ = forward_all(layers_, model_input(model_, sample.features));
  return Message{epoch_, id_, wire::Activation{sample.label, pending_->output}};
}

std::vector<Message> ClientSession::handle(const Message& msg) {
  constexpr std::string_view where = "client";
  if (finished_)
    throw ProtocolError(ProtocolError::Kind::Unexpected, "message after BYE");
  if (msg.client_id != id_)
    throw ProtocolError(ProtocolError::Kind::Unexpected,
                        "message for client " + std::to_string(msg.client_id) +
                            " delivered to client " + std::to_string(id_));
  std::vector<Message> replies;
  switch (msg.type()) {
    case wire::MessageType::TrainConfig: {
      const auto& c = std::get<wire::TrainConfig>(msg.payload);
      try {
        model_ = parse_model_name(c.model_name);
        ModelSpec spec = build(model_);
        layers_ = split(spec).client;
        optimizer_ = SgdState::zeros_like(parameters(std::span<const Layer>(layers_)),
                                          c.learning_rate, c.momentum);
      } catch (const std::invalid_argument& e) {
        throw ProtocolError(ProtocolError::Kind::Unexpected,
                            std::string("bad TRAIN_CONFIG: ") + e.what());
      }
      config_ = c;
      break;
    }
    case wire::MessageType::ModelPush: {
      expect_config("MODEL_PUSH");
      load_params(layers_, std::get<wire::ModelPush>(msg.payload).tensors);
      epoch_ = msg.round;
      order_ = epoch_order(shard_.size(), config_->seed, id_, epoch_);
      position_ = 0;
      pending_.reset();
      if (!shard_.empty()) replies.push_back(next_activation());
      break;
    }
    case wire::MessageType::Gradient: {
      expect_config("GRADIENT");
      if (!pending_)
        throw ProtocolError(ProtocolError::Kind::Unexpected,
                            "GRADIENT without an outstanding ACTIVATION");
      const auto& g = std::get<wire::Gradient>(msg.payload);
      if (g.tensor.shape() != pending_->output.shape())
        throw ProtocolError(ProtocolError::Kind::Unexpected,
                            "GRADIENT shape " + shape_to_string(g.tensor.shape()) +
                                " does not match activation " +
                                shape_to_string(pending_->output.shape()));
      StackGradients grads = backward_all(layers_, *pending_, g.tensor);
      sgd_step(parameters(std::span<Layer>(layers_)), grads.params, *optimizer_);
      pending_.reset();
      if (++position_ < shard_.size()) replies.push_back(next_activation());
      break;
    }
    case wire::MessageType::RoundDone:
      expect_config("ROUND_DONE");
      replies.push_back(Message{msg.round, id_, wire::ModelUpload{copy_params(layers_)}});
      break;
    case wire::MessageType::Bye:
      finished_ = true;
      break;
    default:
      unexpected(msg, "a server message", where);
  }
  return replies;
}

void run_client(Transport& link, ClientSession& session) {
  link.send_message(session.hello());
  while (!session.finished())
    for (const auto& reply : session.handle(link.receive_message()))
      link.send_message(reply);
}

InProcessLink::InProcessLink(ClientSession session) : session_(std::move(session)) {
  outbox_.push_back(wire::encode(session_.hello()));
}

void InProcessLink::do_send(std::span<const std::uint8_t> frame) {
  for (const auto& reply : session_.handle(wire::decode(frame)))
    outbox_.push_back(wire::encode(reply));
}

std::vector<std::uint8_t> InProcessLink::do_receive() {
  if (next_ == outbox_.size())
    throw TransportClosed("client " + std::to_string(session_.client_id()) +
                          " has nothing to send");
  auto frame = std::move(outbox_[next_++]);
  if (next_ == outbox_.size()) {
    outbox_.clear();
    next_ = 0;
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Server

SflServer::SflServer(TrainingConfig cfg, const Dataset& validation)
    : cfg_(std::move(cfg)), validation_(validation) {
  cfg_.validate();
}

TrainResult SflServer::run(
    std::span<Transport* const> links,
    const std::function<void(std::size_t, std::size_t, const std::vector<Layer>&)>& on_step) {
  const std::size_t m = links.size();
  if (m != cfg_.num_clients)
    throw std::invalid_argument("server expects " + std::to_string(cfg_.num_clients) +
                                " clients, got " + std::to_string(m) + " links");

  std::vector<Transport*> link(m, nullptr);
  std::vector<std::size_t> shard(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const Message msg = receive_from(*links[i], i, "before HELLO");
    const auto& hello = expect<wire::Hello>(msg, "HELLO", "server");
    if (msg.client_id >= m || link[msg.client_id] != nullptr)
      throw ProtocolError(ProtocolError::Kind::Unexpected,
                          "HELLO from invalid or duplicate client id " +
                              std::to_string(msg.client_id));
    link[msg.client_id] = links[i];
    shard[msg.client_id] = hello.shard_size;
  }

  const ModelSpec init = build(cfg_.model, cfg_.seed);
  SplitModel halves = split(init);
  std::vector<Layer> server = std::move(halves.server);
  const auto server_params = parameters(std::span<Layer>(server));
  SgdState optimizer = make_optimizer(server, cfg_);
  std::vector<Tensor> grad_sum;  // reused every step
  for (const Tensor* p : server_params) grad_sum.emplace_back(p->shape());

  const wire::TrainConfig announce{std::string(to_string(cfg_.model)),
                                   static_cast<std::uint16_t>(m),
                                   static_cast<std::uint32_t>(cfg_.epochs),
                                   cfg_.effective_learning_rate(),
                                   cfg_.momentum,
                                   cfg_.seed,
                                   cfg_.aggregate};
  for (std::size_t id = 0; id < m; ++id)
    link[id]->send_message(Message{0, static_cast<std::uint16_t>(id), announce});

  std::vector<std::vector<Tensor>> client_params(m, copy_params(halves.client));
  const std::size_t steps = *std::max_element(shard.begin(), shard.end());
  const Shape act_shape = client_output_shape(init);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto round = static_cast<std::uint32_t>(epoch);
    const std::size_t first_row = result.history.size();
    {
      std::vector<Tensor> global;
      if (cfg_.aggregate) global = aggregate(client_params);
      for (std::size_t id = 0; id < m; ++id)
        link[id]->send_message(Message{round, static_cast<std::uint16_t>(id),
                                       wire::ModelPush{cfg_.aggregate ? global
                                                                      : client_params[id]}});
    }
    std::vector<std::size_t> correct(m, 0);

    for (std::size_t step = 0; step < steps; ++step) {
      const std::string context =
          "during epoch " + std::to_string(epoch) + " step " + std::to_string(step);
      std::vector<std::pair<std::size_t, Tensor>> replies;
      const std::size_t row_start = result.history.size();

      for (std::size_t id = 0; id < m; ++id) {
        if (shard[id] <= step) continue;
        const std::uint64_t before = link[id]->bytes_received();
        const Message msg = receive_from(*link[id], id, context);
        const auto& act = expect<wire::Activation>(msg, "ACTIVATION", "server");
        if (msg.client_id != id || msg.round != round)
          throw ProtocolError(ProtocolError::Kind::Unexpected,
                              "ACTIVATION with wrong client id or round " + context);
        if (act.tensor.shape() != act_shape)
          throw ProtocolError(ProtocolError::Kind::Unexpected,
                              "ACTIVATION shape " + shape_to_string(act.tensor.shape()) +
                                  ", expected " + shape_to_string(act_shape));
        if (act.label >= kNumClasses)
          throw ProtocolError(ProtocolError::Kind::Unexpected,
                              "label " + std::to_string(act.label) + " out of range");

        const ForwardTrace trace = forward_all(server, act.tensor);
        const LossResult loss = softmax_cross_entropy(trace.output, act.label);
        if (argmax(trace.output) == act.label) ++correct[id];
        Tensor input_grad = backward_accumulate(
            server, trace, loss.grad_logits, grad_sum,
            replies.empty() ? GradientMode::Overwrite : GradientMode::Add);
        replies.emplace_back(id, std::move(input_grad));

        RoundMetrics row;
        row.epoch = epoch;
        row.step = step;
        row.client_id = static_cast<std::uint16_t>(id);
        row.loss = loss.loss;
        row.train_accuracy = static_cast<double>(correct[id]) / static_cast<double>(step + 1);
        row.activation_bytes = link[id]->bytes_received() - before;
        result.history.push_back(row);
      }
      if (replies.empty()) continue;

      // The server half sees one update per step: the mean over clients.
      if (replies.size() > 1) {
        const float n = static_cast<float>(replies.size());
        for (auto& g : grad_sum)
          for (float& v : g.values()) v /= n;
      }
      sgd_step(server_params, grad_sum, optimizer);

      for (auto& [id, grad] : replies)
        link[id]->send_message(Message{round, static_cast<std::uint16_t>(id),
                                       wire::Gradient{std::move(grad)}});
      for (std::size_t r = row_start; r < result.history.size(); ++r) {
        auto& row = result.history[r];
        row.bytes_up = link[row.client_id]->bytes_received();
        row.bytes_down = link[row.client_id]->bytes_sent();
      }
      if (on_step) on_step(epoch, step, server);
    }

    for (std::size_t id = 0; id < m; ++id)
      link[id]->send_message(Message{round, static_cast<std::uint16_t>(id), wire::RoundDone{}});
    for (std::size_t id = 0; id < m; ++id) {
      const Message msg = receive_from(*link[id], id, "at the end of epoch " +
                                                          std::to_string(epoch));
      const auto& up = expect<wire::ModelUpload>(msg, "MODEL_UPLOAD", "server");
      if (msg.client_id != id)
        throw ProtocolError(ProtocolError::Kind::Unexpected, "MODEL_UPLOAD from wrong client");
      std::vector<Layer> check = halves.client;
      try {
        load_params(check, up.tensors);
      } catch (const DimensionError& e) {
        throw ProtocolError(ProtocolError::Kind::Unexpected,
                            std::string("bad MODEL_UPLOAD: ") + e.what());
      }
      client_params[id] = up.tensors;
    }

    if (!validation_.empty()) {
      const auto client = cfg_.aggregate ? aggregate(client_params) : client_params[0];
      attach_validation(result, first_row,
                        evaluate(assemble(cfg_.model, client, server), validation_));
    }
  }

  for (std::size_t id = 0; id < m; ++id)
    link[id]->send_message(Message{static_cast<std::uint32_t>(cfg_.epochs),
                                   static_cast<std::uint16_t>(id), wire::Bye{}});

  const auto client = cfg_.aggregate ? aggregate(client_params) : client_params[0];
  result.model = assemble(cfg_.model, client, server);
  result.client_params = std::move(client_params);
  return result;
}

namespace {

TrainResult sfl_inline(const TrainingConfig& cfg, std::span<const Dataset> shards,
                       const Dataset& validation, const StepObserver& observer) {
  std::vector<std::unique_ptr<InProcessLink>> links;
  std::vector<Transport*> raw;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    links.push_back(std::make_unique<InProcessLink>(
        ClientSession(static_cast<std::uint16_t>(i), shards[i])));
    raw.push_back(links.back().get());
  }
  std::function<void(std::size_t, std::size_t, const std::vector<Layer>&)> hook;
  if (observer) {
    hook = [&](std::size_t epoch, std::size_t step, const std::vector<Layer>& server) {
      const auto& client = links.front()->session().layers();
      ModelSpec spec = build(cfg.model);
      std::copy(client.begin(), client.end(), spec.layers.begin());
      std::copy(server.begin(), server.end(),
                spec.layers.begin() + static_cast<std::ptrdiff_t>(client.size()));
      observer(epoch, step, spec);
    };
  }
  return SflServer(cfg, validation).run(raw, hook);
}

TrainResult sfl_threaded(const TrainingConfig& cfg, std::span<const Dataset> shards,
                         const Dataset& validation) {
  const std::size_t m = shards.size();
  const bool tcp = cfg.transport == TransportKind::Tcp;
  std::optional<TcpListener> listener;
  if (tcp) listener.emplace("127.0.0.1", 0);

  std::vector<std::unique_ptr<Transport>> server_ends(m);
  std::vector<std::exception_ptr> client_errors(m);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < m; ++i) {
    std::unique_ptr<Transport> client_end;
    if (!tcp) {
      auto [a, b] = make_in_process_pair();
      server_ends[i] = std::move(a);
      client_end = std::move(b);
    }
    const std::uint16_t port = tcp ? listener->port() : 0;
    threads.emplace_back([&, i, port, end = std::move(client_end)]() mutable {
      try {
        if (tcp) end = connect_tcp("127.0.0.1", port);
        ClientSession session(static_cast<std::uint16_t>(i), shards[i]);
        run_client(*end, session);
      } catch (...) {
        client_errors[i] = std::current_exception();
      }
    });
  }

  TrainResult result;
  std::exception_ptr server_error;
  try {
    if (tcp)
      for (auto& end : server_ends) end = listener->accept();
    std::vector<Transport*> raw;
    for (auto& end : server_ends) raw.push_back(end.get());
    result = SflServer(cfg, validation).run(raw);
  } catch (...) {
    server_error = std::current_exception();
  }
  server_ends.clear();  // unblocks clients still waiting on a dead server
  for (auto& t : threads) t.join();
  if (server_error) std::rethrow_exception(server_error);
  for (auto& e : client_errors)
    if (e) std::rethrow_exception(e);
  return result;
}

}  // namespace

TrainResult sfl_train(const TrainingConfig& cfg, std::span<const Dataset> shards,
                      const Dataset& validation, const StepObserver& observer) {
  check_shards(cfg, shards);
  if (cfg.transport == TransportKind::InProcess)
    return sfl_inline(cfg, shards, validation, observer);
  return sfl_threaded(cfg, shards, validation);
}

// ---------------------------------------------------------------------------
// Baselines

TrainResult fl_train(const TrainingConfig& cfg, std::span<const Dataset> shards,
                     const Dataset& validation, const StepObserver& observer) {
  check_shards(cfg, shards);
  if (family_of(cfg.model) != ModelFamily::Mlp)
    throw std::invalid_argument(
        "the FL baseline only supports model1_mlp; CNN models are trained with SFL");
  const std::size_t m = shards.size();
  ModelSpec global = build(cfg.model, cfg.seed);
  std::vector<SgdState> optimizers(m, make_optimizer(global.layers, cfg));
  std::vector<Tensor> grads = gradient_buffers(global.layers);
  const std::uint64_t model_bytes = frame_size(wire::ModelPush{copy_params(global.layers)});
  std::vector<std::uint64_t> up(m, 0), down(m, 0);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first_row = result.history.size();
    std::vector<std::vector<Tensor>> locals;
    for (std::size_t id = 0; id < m; ++id) {
      ModelSpec local = global;
      down[id] += model_bytes;
      const auto& data = shards[id];
      const auto order = epoch_order(data.size(), cfg.seed, id, epoch);
      std::size_t correct = 0;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const Sample& s = data.samples[order[k]];
        const auto out = train_step(local.layers, optimizers[id], grads,
                                    model_input(local, s.features), s.label);
        correct += out.correct;
        if (k + 1 == order.size()) up[id] += model_bytes;
        RoundMetrics row;
        row.epoch = epoch;
        row.step = k;
        row.client_id = static_cast<std::uint16_t>(id);
        row.loss = out.loss;
        row.train_accuracy = static_cast<double>(correct) / static_cast<double>(k + 1);
        row.bytes_up = up[id];
        row.bytes_down = down[id];
        result.history.push_back(row);
        if (observer) observer(epoch, k, local);
      }
      if (order.empty()) up[id] += model_bytes;
      locals.push_back(copy_params(local.layers));
    }
    load_params(global.layers, aggregate(locals));
    if (!validation.empty()) attach_validation(result, first_row, evaluate(global, validation));
  }
  result.model = std::move(global);
  return result;
}

TrainResult centralized_train(const TrainingConfig& cfg, const Dataset& train,
                              const Dataset& validation, const StepObserver& observer) {
  cfg.validate();
  ModelSpec model = build(cfg.model, cfg.seed);
  SgdState optimizer = make_optimizer(model.layers, cfg);
  std::vector<Tensor> grads = gradient_buffers(model.layers);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t first_row = result.history.size();
    const auto order = epoch_order(train.size(), cfg.seed, 0, epoch);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Sample& s = train.samples[order[k]];
      const auto out = train_step(model.layers, optimizer, grads, model_input(model, s.features),
                                  s.label);
      correct += out.correct;
      RoundMetrics row;
      row.epoch = epoch;
      row.step = k;
      row.loss = out.loss;
      row.train_accuracy = static_cast<double>(correct) / static_cast<double>(k + 1);
      result.history.push_back(row);
      if (observer) observer(epoch, k, model);
    }
    if (!validation.empty()) attach_validation(result, first_row, evaluate(model, validation));
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Metrics

std::string format_metrics_row(const RoundMetrics& row) {
  char val[32] = "";
  if (row.val_accuracy) std::snprintf(val, sizeof val, "%.6f", *row.val_accuracy);
  char line[256];
  std::snprintf(line, sizeof line, "%zu,%zu,%u,%.9g,%.6f,%s,%llu,%llu", row.epoch, row.step,
                static_cast<unsigned>(row.client_id), static_cast<double>(row.loss),
                row.train_accuracy, val, static_cast<unsigned long long>(row.bytes_up),
                static_cast<unsigned long long>(row.bytes_down));
  return line;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& row : rows) out << format_metrics_row(row) << '\n';
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const RoundMetrics> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write metrics to " + path.string());
  write_metrics_csv(out, rows);
  if (!out) throw std::runtime_error("error while writing " + path.string());
}

float final_epoch_loss(std::span<const RoundMetrics> rows) {
  if (rows.empty()) return 0.0f;
  const std::size_t last = rows.back().epoch;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : rows)
    if (row.epoch == last) {
      sum += row.loss;
      ++n;
    }
  return static_cast<float>(sum / static_cast<double>(n));
}

}  // namespace sfl
