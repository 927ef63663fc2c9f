// sfl: train, serve, client, eval, export, mfcc and synth in one binary.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "sfl/bytes.hpp"
#include "sfl/data.hpp"
#include "sfl/export.hpp"
#include "sfl/mfcc.hpp"
#include "sfl/orchestrator.hpp"
#include "sfl/wav.hpp"

namespace {

using namespace sfl;

constexpr std::uint16_t kDefaultPort = 7575;

// Options shared by every command that trains or reproduces a data split.
struct RunOptions {
  std::string model = "model1_mlp";
  std::string data = "synth:easy";
  std::size_t clients = 1;
  std::size_t epochs = 3;
  std::optional<float> lr;
  float momentum = 0.6f;
  std::uint64_t seed = 0;
  double val_split = 0.1;
  bool no_aggregate = false;

  TrainingConfig config() const {
    TrainingConfig cfg;
    cfg.model = parse_model_name(model);
    cfg.num_clients = clients;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.seed = seed;
    cfg.val_split = val_split;
    cfg.aggregate = !no_aggregate;
    return cfg;
  }
};

void add_run_options(CLI::App* cmd, RunOptions& o, bool training) {
  cmd->add_option("--model", o.model, "model1_mlp | model2_cnn | model3_cnn")
      ->capture_default_str();
  cmd->add_option("--data", o.data,
                  "synth:easy[:N] | synth:hard[:N] | wav:<dir> | features:<file>")
      ->capture_default_str();
  cmd->add_option("--clients", o.clients, "number of clients M")->capture_default_str();
  cmd->add_option("--seed", o.seed, "seed for data, init and ordering")
      ->envname("SFL_SEED")
      ->capture_default_str();
  cmd->add_option("--val-split", o.val_split, "held-out fraction per class")
      ->capture_default_str();
  if (!training) return;
  cmd->add_option("--epochs", o.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--lr", o.lr, "learning rate (default 0.0005 MLP, 0.005 CNN)");
  cmd->add_option("--momentum", o.momentum, "SGD momentum")->capture_default_str();
  cmd->add_flag("--no-aggregate", o.no_aggregate,
                "keep per-client models instead of averaging them each epoch");
}

struct PreparedData {
  std::vector<Dataset> shards;
  Dataset train;
  Dataset validation;
};

// Every process derives the same split from (data, seed, val_split, M).
PreparedData prepare(const RunOptions& o) {
  Dataset all = load_data_source(o.data, o.seed);
  if (all.empty()) throw std::runtime_error("data source '" + o.data + "' has no samples");
  auto split = split_train_validation(all, o.val_split, o.seed);
  PreparedData out;
  out.shards = partition(split.train, o.clients, o.seed);
  out.train = std::move(split.train);
  out.validation = std::move(split.validation);
  return out;
}

TrainingSnapshot snapshot(const RunOptions& o, const TrainingConfig& cfg,
                          const std::string& scheme) {
  TrainingSnapshot s;
  s.scheme = scheme;
  s.data_source = o.data;
  s.num_clients = static_cast<std::uint16_t>(cfg.num_clients);
  s.epochs = static_cast<std::uint32_t>(cfg.epochs);
  s.learning_rate = cfg.effective_learning_rate();
  s.momentum = cfg.momentum;
  s.seed = cfg.seed;
  s.val_split = static_cast<float>(cfg.val_split);
  s.aggregate = cfg.aggregate;
  return s;
}

void write_outputs(const TrainResult& result, const RunOptions& o, const TrainingConfig& cfg,
                   const std::string& scheme, const std::string& metrics_path,
                   const std::string& out_path) {
  if (!metrics_path.empty()) write_metrics_csv(metrics_path, result.history);
  Checkpoint ckpt;
  ckpt.model = result.model;
  ckpt.config = snapshot(o, cfg, scheme);
  ckpt.metrics.final_val_accuracy =
      result.epoch_val_accuracy.empty() ? -1.0f
                                        : static_cast<float>(result.epoch_val_accuracy.back());
  ckpt.metrics.final_train_loss = final_epoch_loss(result.history);
  ckpt.metrics.steps = static_cast<std::uint32_t>(result.history.size());
  if (!out_path.empty()) save_checkpoint(out_path, ckpt);
  if (!result.epoch_val_accuracy.empty())
    std::printf("validation_accuracy=%.6f\n", result.epoch_val_accuracy.back());
  std::printf("final_train_loss=%.9g\n", static_cast<double>(ckpt.metrics.final_train_loss));
}

void write_port_file(const std::string& path, std::uint16_t port) {
  if (path.empty()) return;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    out << port << '\n';
    if (!out) throw std::runtime_error("cannot write port file " + path);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split federated learning toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every command");

  // train
  RunOptions train_opts;
  std::string scheme = "sfl", transport = "inprocess", metrics_path, out_path;
  auto* train = app.add_subcommand("train", "train a model (SFL, FL or centralized)");
  add_run_options(train, train_opts, true);
  train->add_option("--scheme", scheme, "sfl | fl | centralized")
      ->check(CLI::IsMember({"sfl", "fl", "centralized"}))
      ->capture_default_str();
  train->add_option("--transport", transport, "inprocess | threads | tcp (SFL only)")
      ->check(CLI::IsMember({"inprocess", "threads", "tcp"}))
      ->capture_default_str();
  train->add_option("--metrics", metrics_path, "CSV metrics output path");
  train->add_option("--out", out_path, "checkpoint output path (.sflc)");

  // serve
  RunOptions serve_opts;
  std::string bind = "127.0.0.1", port_file, serve_metrics, serve_out;
  std::uint16_t serve_port = kDefaultPort;
  auto* serve = app.add_subcommand("serve", "run the SFL server over TCP");
  add_run_options(serve, serve_opts, true);
  serve->add_option("--bind", bind, "IPv4 address to listen on")->capture_default_str();
  serve->add_option("--port", serve_port, "TCP port (0 = ephemeral)")
      ->envname("SFL_PORT")
      ->capture_default_str();
  serve->add_option("--port-file", port_file, "write the bound port to this file");
  serve->add_option("--metrics", serve_metrics, "CSV metrics output path");
  serve->add_option("--out", serve_out, "checkpoint output path (.sflc)");

  // client
  RunOptions client_opts;
  std::string host = "127.0.0.1";
  std::uint16_t client_port = kDefaultPort;
  std::size_t client_id = 0;
  double connect_timeout = 10.0;
  auto* client = app.add_subcommand("client", "run one SFL client over TCP");
  add_run_options(client, client_opts, false);
  client->add_option("--host", host, "server host")->capture_default_str();
  client->add_option("--port", client_port, "server port")
      ->envname("SFL_PORT")
      ->capture_default_str();
  client->add_option("--id", client_id, "client id in [0, clients)")->required();
  client->add_option("--connect-timeout", connect_timeout, "seconds to keep retrying")
      ->capture_default_str();

  // eval
  std::string eval_ckpt, eval_quant, eval_data;
  std::optional<std::uint64_t> eval_seed;
  std::optional<double> eval_val;
  bool eval_all = false;
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint or int8 model");
  auto* eval_src = eval->add_option("--checkpoint", eval_ckpt, "SFLC checkpoint");
  eval->add_option("--quantized", eval_quant, "SFLQ int8 model")->excludes(eval_src);
  eval->add_option("--data", eval_data, "data source (default: from the checkpoint)");
  eval->add_option("--seed", eval_seed, "split seed (default: from the checkpoint, else 0)")
      ->envname("SFL_SEED");
  eval->add_option("--val-split", eval_val, "held-out fraction (default: from the checkpoint, else 0.1)");
  eval->add_flag("--all", eval_all, "evaluate on every sample instead of the validation split");

  // export
  std::string export_in, export_out;
  auto* exp = app.add_subcommand("export", "merge and quantise a checkpoint to int8");
  exp->add_option("--checkpoint", export_in, "input SFLC checkpoint")->required();
  exp->add_option("--out", export_out, "output SFLQ file")->required();

  // mfcc
  std::string wav_in, features_out;
  auto* mfcc = app.add_subcommand("mfcc", "50x13 MFCC features of a 1 s WAV clip");
  mfcc->add_option("input", wav_in, "16 kHz mono 16-bit WAV")->required();
  mfcc->add_option("output", features_out, "650 little-endian f32 values")->required();

  // synth
  std::string difficulty = "easy", synth_out;
  std::size_t per_class = 0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write a synthetic SFLF feature file");
  synth->add_option("--difficulty", difficulty, "easy | hard")
      ->check(CLI::IsMember({"easy", "hard"}))
      ->capture_default_str();
  synth->add_option("--per-class", per_class, "samples per class (default 50 easy, 1000 hard)");
  synth->add_option("--seed", synth_seed, "generator seed")->envname("SFL_SEED")->capture_default_str();
  synth->add_option("--out", synth_out, "output SFLF file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "sfl: %s (see --help)\n", e.what());
    return 2;
  }

  try {
    if (*train) {
      TrainingConfig cfg = train_opts.config();
      cfg.transport = parse_transport_kind(transport);
      auto data = prepare(train_opts);
      TrainResult result;
      if (scheme == "sfl") {
        result = sfl_train(cfg, data.shards, data.validation);
      } else if (scheme == "fl") {
        result = fl_train(cfg, data.shards, data.validation);
      } else {
        result = centralized_train(cfg, data.train, data.validation);
      }
      write_outputs(result, train_opts, cfg, scheme, metrics_path, out_path);
    } else if (*serve) {
      TrainingConfig cfg = serve_opts.config();
      auto data = prepare(serve_opts);
      TcpListener listener(bind, serve_port);
      write_port_file(port_file, listener.port());
      std::fprintf(stderr, "sfl serve: listening on %s:%u for %zu clients\n", bind.c_str(),
                   static_cast<unsigned>(listener.port()), cfg.num_clients);
      std::vector<std::unique_ptr<Transport>> links;
      std::vector<Transport*> raw;
      for (std::size_t i = 0; i < cfg.num_clients; ++i) {
        links.push_back(listener.accept());
        raw.push_back(links.back().get());
      }
      TrainResult result = SflServer(cfg, data.validation).run(raw);
      write_outputs(result, serve_opts, cfg, "sfl", serve_metrics, serve_out);
    } else if (*client) {
      if (client_id >= client_opts.clients)
        throw std::invalid_argument("--id must be smaller than --clients");
      auto data = prepare(client_opts);
      auto link = connect_tcp(host, client_port,
                              std::chrono::milliseconds(
                                  static_cast<long long>(connect_timeout * 1000.0)));
      ClientSession session(static_cast<std::uint16_t>(client_id),
                            std::move(data.shards[client_id]));
      run_client(*link, session);
    } else if (*eval) {
      ModelSpec model;
      std::string source = eval_data;
      std::uint64_t seed = eval_seed.value_or(0);
      double val = eval_val.value_or(0.1);
      if (!eval_ckpt.empty()) {
        Checkpoint ckpt = load_checkpoint(eval_ckpt);
        model = std::move(ckpt.model);
        if (source.empty()) source = ckpt.config.data_source;
        if (!eval_seed) seed = ckpt.config.seed;
        if (!eval_val) val = ckpt.config.val_split;
      } else if (!eval_quant.empty()) {
        model = dequantize(load_quantized(eval_quant));
      } else {
        throw std::invalid_argument("eval needs --checkpoint or --quantized");
      }
      if (source.empty()) throw std::invalid_argument("eval needs --data for an int8 model");
      Dataset all = load_data_source(source, seed);
      Dataset target = eval_all ? std::move(all)
                                : split_train_validation(all, val, seed).validation;
      std::printf("validation_accuracy=%.6f\nsamples=%zu\n", evaluate(model, target),
                  target.size());
    } else if (*exp) {
      Checkpoint ckpt = load_checkpoint(export_in);
      QuantizedModel q = quantize_int8(ckpt.model);
      save_quantized(export_out, q);
      std::printf("wrote %s (%zu bytes)\n", export_out.c_str(),
                  encode_quantized(q).size());
    } else if (*mfcc) {
      auto audio = read_wav(wav_in);
      if (audio.size() != kClipSamples)
        std::fprintf(stderr, "sfl mfcc: %zu samples, fitting to %zu\n", audio.size(),
                     kClipSamples);
      FeatureMap fm = mfcc_extract(fit_clip(audio));
      ByteWriter out;
      for (float v : fm.values.values()) out.f32(v);
      write_file(features_out, out.buffer());
    } else if (*synth) {
      const auto level = difficulty == "easy" ? Difficulty::Easy : Difficulty::Hard;
      if (per_class == 0) per_class = level == Difficulty::Easy ? 50 : 1000;
      write_feature_file(synth_out, synth_dataset(synth_seed, per_class, level));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sfl: %s\n", e.what());
    return 1;
  }
  return 0;
}
