#include "fairlatent/checkpoint.hpp"

#include <map>

#include "fairlatent/binary_io.hpp"
#include "fairlatent/errors.hpp"

namespace fairlatent {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::string_view kStatePrefix = "state.";

std::vector<std::pair<std::string, Tensor>> collect(const TrainState& st) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto& model = const_cast<FlowModel&>(st.model);
  const auto all = model.tensors();
  for (const auto& nt : all) out.emplace_back(nt.name, *nt.tensor);
  out.emplace_back("probe.label.weight", st.label_probe.weight);
  out.emplace_back("probe.label.bias", st.label_probe.bias);
  out.emplace_back("probe.sensitive.weight", st.sensitive_probe.weight);
  out.emplace_back("probe.sensitive.bias", st.sensitive_probe.bias);

  const auto trainable = model.trainable_tensors();
  for (std::size_t k = 0; k < st.flow_adam.m.size(); ++k) {
    out.emplace_back("adam.m." + trainable.at(k).name, st.flow_adam.m[k]);
    out.emplace_back("adam.v." + trainable.at(k).name, st.flow_adam.v[k]);
  }
  const char* probe_names[] = {"probe.label.weight", "probe.label.bias", "probe.sensitive.weight",
                               "probe.sensitive.bias"};
  for (std::size_t k = 0; k < st.probe_adam.m.size(); ++k) {
    out.emplace_back(std::string("adam.m.") + probe_names[k], st.probe_adam.m[k]);
    out.emplace_back(std::string("adam.v.") + probe_names[k], st.probe_adam.v[k]);
  }
  if (!st.history.empty()) {
    Tensor h = Tensor::zeros({st.history.size(), EpochRecord::kColumns});
    for (std::size_t r = 0; r < st.history.size(); ++r) {
      const auto row = st.history[r].to_row();
      for (std::size_t c = 0; c < row.size(); ++c) h.at(r, c) = row[c];
    }
    out.emplace_back("history", std::move(h));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& st) {
  KeyValueText header = st.config.to_text();
  const auto& part = st.model.partition();
  header.set("state.dim", st.model.dim());
  header.set("state.label_width", part.label_width);
  header.set("state.sensitive_width", part.sensitive_width);
  header.set("state.label_classes", st.label_classes);
  header.set("state.group_classes", st.group_classes);
  header.set("state.epoch", st.epoch);
  header.set("state.flow_adam_step", static_cast<std::int64_t>(st.flow_adam.step));
  header.set("state.probe_adam_step", static_cast<std::int64_t>(st.probe_adam.step));
  header.set("state.actnorm_initialized", st.model.actnorm_initialized());
  header.set("state.payload", to_string(st.config.precision));
  const std::string text = header.to_string();

  const bool f32 = st.config.precision == Precision::f32;
  io::ByteWriter w;
  w.text("FLCK");
  w.u32(kVersion);
  w.u64(text.size());
  w.text(text);
  for (const auto& [name, t] : collect(st)) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) w.u64(dim);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (f32)
        w.f32(static_cast<float>(t[i]));
      else
        w.f64(t[i]);
    }
  }
  return w.buffer();
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4) != "FLCK") throw FormatError("bad magic: not an FLCK checkpoint", 0);
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto len_at = r.offset();
  const std::uint64_t len = r.u64();
  if (len > r.remaining()) throw FormatError("truncated checkpoint header", len_at);
  const auto header_at = r.offset();

  KeyValueText config_text, state_text;
  TrainState st;
  try {
    const auto all = KeyValueText::parse(r.text(static_cast<std::size_t>(len)));
    for (const auto& [k, v] : all.entries()) {
      if (std::string_view(k).substr(0, kStatePrefix.size()) == kStatePrefix)
        state_text.set(k.substr(kStatePrefix.size()), v);
      else
        config_text.set(k, v);
    }
    st.config = TrainConfig::from_text(config_text);
  } catch (const ConfigError& err) {
    throw FormatError(std::string("invalid checkpoint header: ") + err.what(), header_at);
  }

  const bool f32 = state_text.get_string("payload", "f64") == "f32";
  std::map<std::string, Tensor, std::less<>> records;
  while (!r.at_end()) {
    const auto at = r.offset();
    const std::uint32_t name_len = r.u32();
    if (name_len > r.remaining()) throw FormatError("truncated record name", at);
    std::string name = r.text(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank) + " in record '" + name + "'", at);
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& dim : shape) {
      const std::uint64_t v = r.u64();
      if (v == 0 || v > (std::uint64_t{1} << 32)) throw FormatError("invalid dimension in record '" + name + "'", at);
      dim = static_cast<std::size_t>(v);
      count *= v;
    }
    if (count * (f32 ? 4 : 8) > r.remaining()) throw FormatError("truncated payload of record '" + name + "'", at);
    std::vector<double> data(static_cast<std::size_t>(count));
    for (auto& v : data) v = f32 ? static_cast<double>(r.f32()) : r.f64();
    records.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }

  const std::size_t end = r.offset();
  try {
    const auto dim = static_cast<std::size_t>(state_text.get_int("dim", 0));
    const LatentPartition part{static_cast<std::size_t>(state_text.get_int("label_width", 0)),
                               static_cast<std::size_t>(state_text.get_int("sensitive_width", 0))};
    st.model = FlowModel::identity(st.config.flow_config(dim), part);
    st.model.mark_actnorm_initialized(state_text.get_bool("actnorm_initialized", true));
    st.label_classes = static_cast<int>(state_text.get_int("label_classes", 2));
    st.group_classes = static_cast<int>(state_text.get_int("group_classes", 2));
    st.epoch = static_cast<std::size_t>(state_text.get_int("epoch", 0));
    st.flow_adam.step = static_cast<std::uint64_t>(state_text.get_int("flow_adam_step", 0));
    st.probe_adam.step = static_cast<std::uint64_t>(state_text.get_int("probe_adam_step", 0));
  } catch (const Error& err) {
    throw FormatError(std::string("invalid checkpoint state: ") + err.what(), header_at);
  }

  auto take = [&](const std::string& name, const Shape* expected) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError("checkpoint is missing record '" + name + "'", end);
    if (expected && it->second.shape() != *expected)
      throw FormatError("record '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                            shape_string(*expected),
                        end);
    Tensor t = std::move(it->second);
    records.erase(it);
    return t;
  };

  for (auto& nt : st.model.tensors()) *nt.tensor = take(nt.name, &nt.tensor->shape());
  st.label_probe.weight = take("probe.label.weight", nullptr);
  st.label_probe.bias = take("probe.label.bias", nullptr);
  st.sensitive_probe.weight = take("probe.sensitive.weight", nullptr);
  st.sensitive_probe.bias = take("probe.sensitive.bias", nullptr);

  if (st.flow_adam.step > 0) {
    for (auto& nt : st.model.trainable_tensors()) {
      st.flow_adam.m.push_back(take("adam.m." + nt.name, &nt.tensor->shape()));
      st.flow_adam.v.push_back(take("adam.v." + nt.name, &nt.tensor->shape()));
    }
  }
  if (st.probe_adam.step > 0) {
    for (const char* name :
         {"probe.label.weight", "probe.label.bias", "probe.sensitive.weight", "probe.sensitive.bias"}) {
      st.probe_adam.m.push_back(take(std::string("adam.m.") + name, nullptr));
      st.probe_adam.v.push_back(take(std::string("adam.v.") + name, nullptr));
    }
  }
  if (records.count("history")) {
    const Tensor h = take("history", nullptr);
    if (h.cols() != EpochRecord::kColumns) throw FormatError("history record has the wrong width", end);
    for (std::size_t i = 0; i < h.rows(); ++i) st.history.push_back(EpochRecord::from_row(h.row_span(i)));
  }
  if (!records.empty()) throw FormatError("unexpected record '" + records.begin()->first + "'", end);
  return st;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace fairlatent
