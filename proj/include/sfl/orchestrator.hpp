#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/models.hpp"
#include "sfl/transport.hpp"

namespace sfl {

enum class TransportKind : std::uint8_t {
  InProcess,          // single thread, clients driven inline (deterministic, observable)
  InProcessThreaded,  // one thread per client over in-memory queues
  Tcp,                // one thread per client over loopback sockets
};

std::string_view to_string(TransportKind kind);
TransportKind parse_transport_kind(std::string_view text);

/// Learning rate used when none is given: 0.0005 for the MLP, 0.005 for CNNs.
float default_learning_rate(ModelName model);

struct TrainingConfig {
  ModelName model = ModelName::Model1Mlp;
  std::size_t num_clients = 1;
  std::size_t epochs = 3;
  std::optional<float> learning_rate;
  float momentum = 0.6f;
  std::uint64_t seed = 0;
  double val_split = 0.1;
  TransportKind transport = TransportKind::InProcess;
  bool aggregate = true;  // false keeps one client model per client

  float effective_learning_rate() const {
    return learning_rate.value_or(default_learning_rate(model));
  }
  /// Throws std::invalid_argument for out-of-range values.
  void validate() const;
};

/// One row per (epoch, step, participating client). Byte counters are
/// cumulative for that client since the start of the run.
struct RoundMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::uint16_t client_id = 0;
  float loss = 0.0f;
  double train_accuracy = 0.0;  // running accuracy of this client this epoch
  std::optional<double> val_accuracy;  // set on the last row of each epoch
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t activation_bytes = 0;  // ACTIVATION frame bytes in this row
};

struct TrainResult {
  ModelSpec model;  // merged model, aggregated client half when enabled
  std::vector<RoundMetrics> history;
  std::vector<double> epoch_val_accuracy;  // empty without a validation set
  /// Client halves as uploaded after the final epoch, indexed by client id.
  std::vector<std::vector<Tensor>> client_params;
};

/// Called after every server step of an in-process SFL run with the current
/// merged model (client 0 half + server half). Also called after every
/// sample of FL and centralized runs with the model being trained.
using StepObserver =
    std::function<void(std::size_t epoch, std::size_t step, const ModelSpec& model)>;

/// Element-wise mean of client parameter lists. Each element is averaged
/// from its values sorted ascending and summed in double, so the result does
/// not depend on client order. A single list is returned unchanged.
std::vector<Tensor> aggregate(std::span<const std::vector<Tensor>> client_params);

/// Fraction of samples whose argmax prediction matches the label.
/// Throws std::invalid_argument on an empty dataset.
double evaluate(const ModelSpec& model, const Dataset& data);

// ---------------------------------------------------------------------------
// Split federated learning

/// Client side of the SFL protocol as a message handler: every incoming
/// message yields the replies to send. No I/O happens here.
class ClientSession {
 public:
  ClientSession(std::uint16_t client_id, Dataset shard);

  wire::Message hello() const;
  std::vector<wire::Message> handle(const wire::Message& msg);

  bool finished() const { return finished_; }
  std::uint16_t client_id() const { return id_; }
  /// Client half (zero until the first MODEL_PUSH).
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  wire::Message next_activation();
  void expect_config(const char* what) const;

  std::uint16_t id_;
  Dataset shard_;
  std::optional<wire::TrainConfig> config_;
  ModelName model_ = ModelName::Model1Mlp;
  std::vector<Layer> layers_;
  std::optional<SgdState> optimizer_;
  std::uint32_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  std::optional<ForwardTrace> pending_;
  bool finished_ = false;
};

/// Drives a session over a transport until BYE: sends HELLO, then answers
/// every message.
void run_client(Transport& link, ClientSession& session);

/// Transport whose peer is a ClientSession run inline: sending a frame makes
/// the session handle it and queue its replies. Single threaded.
class InProcessLink final : public Transport {
 public:
  explicit InProcessLink(ClientSession session);
  const ClientSession& session() const { return session_; }

 protected:
  void do_send(std::span<const std::uint8_t> frame) override;
  std::vector<std::uint8_t> do_receive() override;

 private:
  ClientSession session_;
  std::vector<std::vector<std::uint8_t>> outbox_;
  std::size_t next_ = 0;
};

/// Server side of SFL. Owns the server half and the client aggregation.
class SflServer {
 public:
  /// `validation` may be empty; then no validation accuracy is reported.
  SflServer(TrainingConfig cfg, const Dataset& validation);

  /// Runs the whole protocol over the given links, one per client, in any
  /// order (clients are identified by their HELLO). `on_step` runs after
  /// every server update.
  TrainResult run(std::span<Transport* const> links,
                  const std::function<void(std::size_t, std::size_t,
                                           const std::vector<Layer>&)>& on_step = {});

 private:
  TrainingConfig cfg_;
  const Dataset& validation_;
};

/// SFL with every client simulated locally over the configured transport.
/// The observer is only honoured for TransportKind::InProcess.
TrainResult sfl_train(const TrainingConfig& cfg, std::span<const Dataset> shards,
                      const Dataset& validation, const StepObserver& observer = {});

/// FedAvg baseline: each round every client trains the full model for one
/// local epoch from the global weights, then the server averages. Only the
/// MLP is supported; CNNs throw std::invalid_argument.
TrainResult fl_train(const TrainingConfig& cfg, std::span<const Dataset> shards,
                     const Dataset& validation, const StepObserver& observer = {});

/// Single-party training on one dataset. Visiting order is
/// epoch_order(n, seed, 0, epoch), the same as SFL client 0.
TrainResult centralized_train(const TrainingConfig& cfg, const Dataset& train,
                              const Dataset& validation,
                              const StepObserver& observer = {});

// ---------------------------------------------------------------------------
// Metrics output

inline constexpr std::string_view kMetricsHeader =
    "epoch,step,client_id,loss,train_acc,val_acc,bytes_up,bytes_down";

std::string format_metrics_row(const RoundMetrics& row);
void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rows);
void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const RoundMetrics> rows);

/// Mean loss of the rows in the final epoch (0 when there are none).
float final_epoch_loss(std::span<const RoundMetrics> rows);

}  // namespace sfl
