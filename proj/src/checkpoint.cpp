#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "emglab/models.hpp"

namespace emglab::models {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'E', 'M', 'G', 'M'};
constexpr std::uint32_t kVersion = 1;

json spec_to_json(const LayerSpec& s) {
  json j;
  switch (s.kind) {
    case tensor::LayerKind::conv2d:
      j["kind"] = "conv2d";
      j["out_channels"] = s.conv_out_channels;
      j["kernel_h"] = s.kernel_h;
      j["kernel_w"] = s.kernel_w;
      j["padding"] = s.padding == Padding::same ? "same" : "none";
      break;
    case tensor::LayerKind::batchnorm:
      j["kind"] = "batchnorm";
      break;
    case tensor::LayerKind::leaky_relu:
      j["kind"] = "leaky_relu";
      j["slope"] = s.leaky_slope;
      break;
    case tensor::LayerKind::flatten:
      j["kind"] = "flatten";
      break;
    case tensor::LayerKind::dense:
      j["kind"] = "dense";
      j["out_units"] = s.dense_out_units;
      break;
    case tensor::LayerKind::dropout:
      j["kind"] = "dropout";
      j["rate"] = s.dropout_rate;
      break;
  }
  return j;
}

LayerSpec spec_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    return LayerSpec::conv(j.at("out_channels").get<int>(), j.at("kernel_h").get<int>(),
                           j.at("kernel_w").get<int>(),
                           j.at("padding").get<std::string>() == "same" ? Padding::same
                                                                        : Padding::none);
  }
  if (kind == "batchnorm") return LayerSpec::batchnorm();
  if (kind == "leaky_relu") return LayerSpec::leaky(j.at("slope").get<double>());
  if (kind == "flatten") return LayerSpec::flat();
  if (kind == "dense") return LayerSpec::fully_connected(j.at("out_units").get<int>());
  if (kind == "dropout") return LayerSpec::drop(j.at("rate").get<double>());
  throw DataError("checkpoint names unknown layer kind '" + kind + "'");
}

struct ArrayWriter {
  json table = json::array();
  std::vector<double> payload;

  void add(const std::string& name, const Tensor& t) {
    if (t.size() == 0) return;
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = payload.size();
    entry["count"] = t.size();
    table.push_back(std::move(entry));
    payload.insert(payload.end(), t.values().begin(), t.values().end());
  }
};

struct ArrayReader {
  const json& table;
  const std::vector<double>& payload;

  bool has(const std::string& name) const {
    for (const auto& e : table) {
      if (e.at("name").get<std::string>() == name) return true;
    }
    return false;
  }

  Tensor get(const std::string& name) const {
    for (const auto& e : table) {
      if (e.at("name").get<std::string>() != name) continue;
      const auto shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t count = e.at("count").get<std::size_t>();
      if (offset + count > payload.size()) {
        throw DataError("checkpoint array '" + name + "' exceeds payload");
      }
      return Tensor(shape, std::vector<double>(payload.begin() + offset,
                                               payload.begin() + offset + count));
    }
    throw DataError("checkpoint is missing array '" + name + "'");
  }
};

void stack_arrays(const std::string& prefix, const LayerStack& s, ArrayWriter& w,
                  json& bn_flags) {
  const auto& slots = s.slots();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    w.add(base + ".weights", slots[i].weights);
    w.add(base + ".bias", slots[i].bias);
    w.add(base + ".gamma", slots[i].gamma);
    w.add(base + ".beta", slots[i].beta);
    if (slots[i].bn.initialized) {
      w.add(base + ".bn_mean", slots[i].bn.running_mean);
      w.add(base + ".bn_var", slots[i].bn.running_var);
    }
    if (slots[i].spec.kind == tensor::LayerKind::batchnorm) {
      bn_flags.push_back(slots[i].bn.initialized);
    }
  }
}

void restore_stack_arrays(const std::string& prefix, LayerStack& s, const ArrayReader& r) {
  auto& slots = s.slots();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    if (r.has(base + ".weights")) slots[i].weights = r.get(base + ".weights");
    if (r.has(base + ".bias")) slots[i].bias = r.get(base + ".bias");
    if (r.has(base + ".gamma")) slots[i].gamma = r.get(base + ".gamma");
    if (r.has(base + ".beta")) slots[i].beta = r.get(base + ".beta");
    if (r.has(base + ".bn_mean")) {
      slots[i].bn.running_mean = r.get(base + ".bn_mean");
      slots[i].bn.running_var = r.get(base + ".bn_var");
      slots[i].bn.initialized = true;
    }
  }
}

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::string& path) {
  json header;
  header["format"] = "emglab-model";
  header["kind"] = model_kind_name(model.spec.kind);
  header["input_h"] = model.spec.input_h;
  header["input_w"] = model.spec.input_w;
  header["class_ids"] = model.spec.class_ids;
  header["triplet"] = {{"margin_alpha", model.spec.triplet.margin_alpha},
                       {"batch_size", model.spec.triplet.batch_size}};
  header["center"] = {{"tau", model.spec.center.tau},
                      {"center_lr", model.spec.center.center_lr}};
  header["ecnn"] = {{"lambda_kl", model.spec.ecnn.lambda_kl},
                    {"evidence_activation",
                     model.spec.ecnn.evidence_activation == EcnnConfig::Activation::relu
                         ? "relu"
                         : "softplus"}};
  header["train"] = {{"learning_rate", model.train_cfg.learning_rate},
                     {"batch_size", model.train_cfg.batch_size},
                     {"patience", model.train_cfg.patience},
                     {"min_delta", model.train_cfg.min_delta},
                     {"max_epochs", model.train_cfg.max_epochs},
                     {"best_epoch_recall", model.train_cfg.best_epoch_recall},
                     {"seed", model.train_cfg.seed}};
  header["log"] = {{"train_loss", model.log.train_loss},
                   {"valid_loss", model.log.valid_loss},
                   {"skipped_batches", model.log.skipped_batches},
                   {"best_epoch", model.log.best_epoch},
                   {"epochs_run", model.log.epochs_run}};

  json net_specs = json::array();
  for (const auto& s : model.net.stack().specs()) net_specs.push_back(spec_to_json(s));
  header["net_specs"] = net_specs;
  json head_specs = json::array();
  for (const auto& s : model.head.specs()) head_specs.push_back(spec_to_json(s));
  header["head_specs"] = head_specs;

  ArrayWriter w;
  json net_bn = json::array(), head_bn = json::array();
  stack_arrays("net", model.net.stack(), w, net_bn);
  stack_arrays("head", model.head, w, head_bn);
  w.add("centers", model.centers);
  if (model.centroids.num_classes() > 0) {
    header["centroids"] = {{"class_ids", model.centroids.class_ids},
                           {"counts", model.centroids.counts},
                           {"dim", model.centroids.dim}};
    Tensor c({model.centroids.num_classes(), model.centroids.dim}, model.centroids.centroids);
    w.add("centroids", c);
  }
  header["arrays"] = std::move(w.table);

  const std::string head_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  const std::uint64_t head_len = head_str.size();
  write_raw(out, head_len);
  out.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));
  out.write(reinterpret_cast<const char*>(w.payload.data()),
            static_cast<std::streamsize>(w.payload.size() * sizeof(double)));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad checkpoint magic in " + path, 0);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion) {
    throw ParseError("unsupported checkpoint version in " + path, 4);
  }
  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (!in) throw ParseError("truncated checkpoint header length", 8);
  std::string head_str(head_len, '\0');
  in.read(head_str.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw ParseError("truncated checkpoint header", 16);

  json header;
  try {
    header = json::parse(head_str);
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what(), 16);
  }

  std::vector<double> payload;
  {
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(double) != 0) {
      throw ParseError("checkpoint payload is not a whole number of float64 values",
                       16 + head_len + bytes.size());
    }
    payload.resize(bytes.size() / sizeof(double));
    std::memcpy(payload.data(), bytes.data(), bytes.size());
  }

  TrainedModel model;
  model.spec.kind = model_kind_from_name(header.at("kind").get<std::string>());
  model.spec.input_h = header.at("input_h").get<int>();
  model.spec.input_w = header.at("input_w").get<int>();
  model.spec.class_ids = header.at("class_ids").get<std::vector<int>>();
  model.spec.triplet.margin_alpha = header.at("triplet").at("margin_alpha").get<double>();
  model.spec.triplet.batch_size = header.at("triplet").at("batch_size").get<int>();
  model.spec.center.tau = header.at("center").at("tau").get<double>();
  model.spec.center.center_lr = header.at("center").at("center_lr").get<double>();
  model.spec.ecnn.lambda_kl = header.at("ecnn").at("lambda_kl").get<double>();
  model.spec.ecnn.evidence_activation =
      header.at("ecnn").at("evidence_activation").get<std::string>() == "relu"
          ? EcnnConfig::Activation::relu
          : EcnnConfig::Activation::softplus;
  model.train_cfg.learning_rate = header.at("train").at("learning_rate").get<double>();
  model.train_cfg.batch_size = header.at("train").at("batch_size").get<int>();
  model.train_cfg.patience = header.at("train").at("patience").get<int>();
  model.train_cfg.min_delta = header.at("train").at("min_delta").get<double>();
  model.train_cfg.max_epochs = header.at("train").at("max_epochs").get<int>();
  model.train_cfg.best_epoch_recall = header.at("train").at("best_epoch_recall").get<bool>();
  model.train_cfg.seed = header.at("train").at("seed").get<std::uint64_t>();
  model.log.train_loss = header.at("log").at("train_loss").get<std::vector<double>>();
  model.log.valid_loss = header.at("log").at("valid_loss").get<std::vector<double>>();
  model.log.skipped_batches = header.at("log").at("skipped_batches").get<std::vector<int>>();
  model.log.best_epoch = header.at("log").at("best_epoch").get<int>();
  model.log.epochs_run = header.at("log").at("epochs_run").get<int>();

  std::vector<LayerSpec> net_specs, head_specs;
  for (const auto& j : header.at("net_specs")) net_specs.push_back(spec_from_json(j));
  for (const auto& j : header.at("head_specs")) head_specs.push_back(spec_from_json(j));

  Rng zero(0);
  model.net = EmbeddingNet(model.spec.input_h, model.spec.input_w, net_specs, zero);
  if (!head_specs.empty()) {
    model.head = LayerStack({model.net.embedding_dim()}, head_specs, zero, "head");
  }

  ArrayReader r{header.at("arrays"), payload};
  restore_stack_arrays("net", model.net.stack(), r);
  restore_stack_arrays("head", model.head, r);
  if (r.has("centers")) model.centers = r.get("centers");
  if (header.contains("centroids")) {
    model.centroids.class_ids = header.at("centroids").at("class_ids").get<std::vector<int>>();
    model.centroids.counts = header.at("centroids").at("counts").get<std::vector<int>>();
    model.centroids.dim = header.at("centroids").at("dim").get<int>();
    model.centroids.centroids = r.get("centroids").values();
  }
  return model;
}

}  // namespace emglab::models
