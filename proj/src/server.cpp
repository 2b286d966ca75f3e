#include "latentshift/server.hpp"

#include "latentshift/artifacts.hpp"
#include "latentshift/pipeline.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>

namespace latentshift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Request problem carrying its HTTP status.
struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

HttpResult error(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::string required_string(const json& req, const char* key) {
  if (!req.is_object() || !req.contains(key) || !req[key].is_string() || req[key].get<std::string>().empty())
    throw HttpError(422, std::string("'") + key + "' must be a non-empty string");
  return req[key].get<std::string>();
}

int likert(const json& req, const char* key) {
  if (!req.contains(key) || !req[key].is_number_integer())
    throw HttpError(422, std::string("'") + key + "' must be an integer 1-5");
  const auto v = req[key].get<long long>();
  if (v < 1 || v > 5) throw HttpError(422, std::string("'") + key + "' must be an integer 1-5");
  return static_cast<int>(v);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json image_payload(const Map2D& values, double lo, double hi, bool raw) {
  json j = {{"png_base64", base64_encode(encode_png(quantize(values, lo, hi, 8)))},
            {"width", values.cols()},
            {"height", values.rows()},
            {"bit_depth", 8},
            {"lo", lo},
            {"hi", hi}};
  if (raw) j["values"] = std::vector<double>(values.data(), values.data() + values.size());
  return j;
}

std::vector<std::string> allowed_methods(Group g) {
  std::vector<std::string> out;
  for (Method m : all_methods())
    if (is_latent_shift(m) == (g == Group::B)) out.emplace_back(to_string(m));
  return out;
}

json case_payload(const StudyCase& c) {
  return {{"case_id", c.case_id},         {"sample_id", c.sample_id},
          {"finding", c.finding},         {"model_id", c.model_id},
          {"group", to_string(c.group)},  {"prediction", c.prediction},
          {"allowed_methods", allowed_methods(c.group)}};
}

json session_payload(const StudySession& s) {
  json cases = json::array();
  for (const auto& c : s.cases) cases.push_back(case_payload(c));
  return {{"session_id", s.session_id},
          {"reader_id", s.reader_id},
          {"seed", s.seed},
          {"arm", s.arm},
          {"questions", {{"confidence", kConfidenceQuestion}, {"correct_feature", kFeatureQuestion}}},
          {"cases", cases}};
}

/// Yields parsed lines; a torn final line from an interrupted append is ignored.
std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      if (f.peek() != std::char_traits<char>::eof()) throw;
    }
  }
  return out;
}

}  // namespace

ServiceConfig config_from_env() {
  ServiceConfig c;
  const char* dir = std::getenv("LS_DATA_DIR");
  c.data_dir = dir && *dir ? dir : "data";
  return c;
}

int port_from_env() {
  const char* p = std::getenv("LS_PORT");
  if (!p || !*p) return 8080;
  char* end = nullptr;
  const long v = std::strtol(p, &end, 10);
  if (*end != '\0' || v < 0 || v > 65535) throw std::invalid_argument(std::string("LS_PORT is not a port: ") + p);
  return static_cast<int>(v);
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  const fs::path ds = config_.data_dir / "dataset";
  if (fs::is_directory(ds)) samples_ = ingest_external(ds).samples;
  for (std::size_t i = 0; i < samples_.size(); ++i) sample_index_[samples_[i].id] = i;
  load_study();
}

void Service::load_study() {
  const fs::path dir = config_.data_dir / "study";
  for (const auto& j : read_jsonl(dir / "sessions.jsonl")) {
    StudySession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.reader_id = j.at("reader_id").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.arm = j.at("arm").get<int>();
    for (const auto& c : j.at("cases")) s.cases.push_back(case_from_json(c));
    session_order_.push_back(s.session_id);
    sessions_[s.session_id] = std::move(s);
  }
  for (const auto& j : read_jsonl(dir / "responses.jsonl")) records_.push_back(record_from_json(j));
}

void Service::append_line(const fs::path& path, const json& line) {
  fs::create_directories(path.parent_path());
  const std::string text = line.dump() + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path.string());
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("write failed on " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw std::runtime_error("fsync failed on " + path.string());
}

const Sample* Service::find_sample(const std::string& id) const {
  const auto it = sample_index_.find(id);
  return it == sample_index_.end() ? nullptr : &samples_[it->second];
}

std::shared_ptr<const Classifier> Service::classifier(const std::string& id) {
  std::lock_guard lock(model_mutex_);
  if (auto it = classifiers_.find(id); it != classifiers_.end()) return it->second;
  const fs::path dir = config_.data_dir / "models" / id;
  if (id.find('/') != std::string::npos || id.find("..") != std::string::npos || !fs::is_directory(dir))
    throw HttpError(404, "unknown model '" + id + "'");
  if (read_manifest(dir).kind != "classifier") throw HttpError(404, "'" + id + "' is not a classifier");
  auto c = std::make_shared<const Classifier>(load_classifier(dir));
  classifiers_[id] = c;
  return c;
}

std::shared_ptr<const Autoencoder> Service::autoencoder(const std::string& id) {
  std::lock_guard lock(model_mutex_);
  if (auto it = autoencoders_.find(id); it != autoencoders_.end()) return it->second;
  const fs::path dir = config_.data_dir / "models" / id;
  if (id.find('/') != std::string::npos || id.find("..") != std::string::npos || !fs::is_directory(dir))
    throw HttpError(404, "unknown autoencoder '" + id + "'");
  if (read_manifest(dir).kind != "autoencoder") throw HttpError(404, "'" + id + "' is not an autoencoder");
  auto a = std::make_shared<const Autoencoder>(load_autoencoder(dir));
  autoencoders_[id] = a;
  return a;
}

std::optional<std::string> Service::default_model(const std::string& kind) {
  std::optional<std::string> found;
  for (const auto& m : list_models(config_.data_dir / "models")) {
    if (m.kind != kind) continue;
    if (found) return std::nullopt;
    found = m.model_id;
  }
  return found;
}

json Service::lambda_bounds(const Sample& s, const std::string& model_id, const Classifier& clf,
                            const std::string& ae_id, const Autoencoder& ae, const std::string& task) {
  const std::string key = s.id + "|" + model_id + "|" + ae_id + "|" + task;
  {
    std::lock_guard lock(model_mutex_);
    if (auto it = bounds_.find(key); it != bounds_.end()) return it->second;
  }
  SweepOptions so = config_.explain.sweep;
  so.target = config_.explain.target;
  const LambdaSweep sw = sweep(ae, clf, s.image, task, so);
  json b = {{"low", sw.low.lambda},
            {"high", sw.high.lambda},
            {"low_stop_reason", to_string(sw.low.reason)},
            {"high_stop_reason", to_string(sw.high.reason)}};
  std::lock_guard lock(model_mutex_);
  bounds_[key] = b;
  return b;
}

HttpResult Service::models() {
  json list = json::array();
  for (const auto& m : list_models(config_.data_dir / "models")) {
    json j = m.data;
    j["model_id"] = m.model_id;
    list.push_back(std::move(j));
  }
  return {200, {{"models", list}}};
}

HttpResult Service::samples() {
  json list = json::array();
  for (const auto& s : samples_) {
    json masks = json::array();
    for (const auto& [f, m] : s.masks) masks.push_back(f);
    list.push_back({{"id", s.id},
                    {"labels", s.labels},
                    {"masks", masks},
                    {"height", s.image.dim(1)},
                    {"width", s.image.dim(2)}});
  }
  return {200, {{"count", samples_.size()}, {"samples", list}}};
}

HttpResult Service::explain(const json& req, bool raw) {
  try {
    const std::string sample_id = required_string(req, "sample_id");
    const std::string model_id = required_string(req, "model_id");
    const std::string task = required_string(req, "task");
    const bool has_lambda = req.contains("lambda") && !req["lambda"].is_null();
    double lambda = 0;
    if (has_lambda) {
      if (!req["lambda"].is_number()) throw HttpError(422, "'lambda' must be a finite number");
      lambda = req["lambda"].get<double>();
      if (!std::isfinite(lambda)) throw HttpError(422, "'lambda' must be a finite number");
    }
    Method method = Method::LatentShiftMax;
    if (req.contains("method") && !req["method"].is_null()) {
      if (!req["method"].is_string()) throw HttpError(422, "'method' must be a string");
      try {
        method = method_from_string(req["method"].get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw HttpError(422, e.what());
      }
    }

    if (req.contains("session_id") || req.contains("case_id")) {
      const std::string session_id = required_string(req, "session_id");
      const std::string case_id = required_string(req, "case_id");
      std::lock_guard lock(study_mutex_);
      const auto it = sessions_.find(session_id);
      if (it == sessions_.end()) throw HttpError(404, "unknown session '" + session_id + "'");
      const StudyCase* c = nullptr;
      for (const auto& sc : it->second.cases)
        if (sc.case_id == case_id) c = &sc;
      if (!c) throw HttpError(404, "unknown case '" + case_id + "'");
      const bool wants_latent = has_lambda || is_latent_shift(method);
      if (wants_latent != (c->group == Group::B))
        throw HttpError(403, "group " + std::string(to_string(c->group)) + " cases do not show " +
                                 (has_lambda ? std::string("latent-shift frames") : std::string(to_string(method))));
    }

    const Sample* s = find_sample(sample_id);
    if (!s) throw HttpError(404, "unknown sample '" + sample_id + "'");
    const auto clf = classifier(model_id);
    Index t = 0;
    try {
      t = clf->task_index(task);
    } catch (const std::invalid_argument&) {
      throw HttpError(404, "unknown task '" + task + "' for model '" + model_id + "'");
    }
    std::string ae_id;
    if (req.contains("ae_id") && !req["ae_id"].is_null()) {
      ae_id = required_string(req, "ae_id");
    } else if (auto d = default_model("autoencoder")) {
      ae_id = *d;
    }
    std::shared_ptr<const Autoencoder> ae;
    if (!ae_id.empty()) ae = autoencoder(ae_id);
    if (!ae && (has_lambda || is_latent_shift(method)))
      throw HttpError(404, "no autoencoder; pass 'ae_id'");

    json body = {{"sample_id", sample_id}, {"model_id", model_id}, {"task", task}};
    body["ae_id"] = ae_id.empty() ? json(nullptr) : json(ae_id);
    body["lambda_bounds"] = ae ? lambda_bounds(*s, model_id, *clf, ae_id, *ae, task) : json(nullptr);
    if (has_lambda) {
      SweepOptions so = config_.explain.sweep;
      so.target = config_.explain.target;
      const ShiftedFrame f = shifted_frame(*ae, *clf, s->image, task, lambda, so);
      body["lambda"] = lambda;
      body["prediction"] = f.prediction;
      body["calibrated_prediction"] =
          clf->thresholds.empty() ? f.prediction : calibrate(f.prediction, clf->thresholds[static_cast<std::size_t>(t)]);
      body["frame"] = image_payload(channel(f.frame), -kImageRange, kImageRange, raw);
      return {200, body};
    }
    ExplainOptions options = config_.explain;
    const Map2D map = latentshift::explain(method, *clf, ae.get(), s->image, task, options).values;
    body["method"] = to_string(method);
    body["prediction"] = clf->predict(s->image, t);
    body["calibrated_prediction"] = calibrated_prediction(*clf, s->image, t);
    body["map"] = image_payload(map, map.minCoeff(), map.maxCoeff(), raw);
    return {200, body};
  } catch (const HttpError& e) {
    return error(e.status, e.what());
  }
}

HttpResult Service::create_session(const json& req) {
  try {
    const std::string reader = required_string(req, "reader_id");
    int n_cases = config_.default_cases;
    if (req.contains("cases")) {
      if (!req["cases"].is_number_integer()) throw HttpError(422, "'cases' must be an even integer");
      n_cases = req["cases"].get<int>();
    }
    if (n_cases < 2 || n_cases % 2 != 0) throw HttpError(422, "'cases' must be an even integer >= 2");
    const std::uint64_t seed = req.contains("seed") ? req["seed"].get<std::uint64_t>() : config_.seed;
    std::string model_id;
    if (req.contains("model_id")) {
      model_id = required_string(req, "model_id");
    } else if (auto d = default_model("classifier")) {
      model_id = *d;
    } else {
      throw HttpError(422, "pass 'model_id'; there is not exactly one classifier");
    }
    const auto clf = classifier(model_id);
    if (clf->thresholds.empty()) throw HttpError(422, "model '" + model_id + "' is not calibrated");
    if (samples_.empty()) throw HttpError(404, "no dataset loaded");

    std::vector<StudyCase> candidates;
    for (const auto& s : split_dataset(samples_).test) {
      const Tensor p = clf->predict(s.image);
      for (std::size_t t = 0; t < clf->task_names.size(); ++t) {
        const std::string& f = clf->task_names[t];
        if (!s.labels.count(f)) continue;
        StudyCase c;
        c.sample_id = s.id;
        c.finding = f;
        c.model_id = model_id;
        c.case_id = make_case_id(s.id, f, model_id);
        c.prediction = calibrate(p[static_cast<Index>(t)], clf->thresholds[t]);
        c.ground_truth = s.label(f);
        candidates.push_back(std::move(c));
      }
    }

    std::lock_guard lock(study_mutex_);
    int arm = 0;
    if (req.contains("arm")) {
      if (!req["arm"].is_number_integer() || (req["arm"] != 0 && req["arm"] != 1))
        throw HttpError(422, "'arm' must be 0 or 1");
      arm = req["arm"].get<int>();
    } else {
      for (const auto& [id, s] : sessions_) arm += s.seed == seed;
      arm %= 2;
    }
    StudySession session;
    try {
      session.cases = stratified_cases(candidates, n_cases, seed, arm);
    } catch (const std::runtime_error& e) {
      throw HttpError(422, e.what());
    }
    char id[32];
    std::snprintf(id, sizeof id, "session-%04zu", sessions_.size() + 1);
    session.session_id = id;
    session.reader_id = reader;
    session.seed = seed;
    session.arm = arm;
    json line = {{"session_id", session.session_id}, {"reader_id", reader}, {"seed", seed}, {"arm", arm},
                 {"created", utc_now()}};
    line["cases"] = json::array();
    for (const auto& c : session.cases) line["cases"].push_back(to_json(c));
    append_line(config_.data_dir / "study" / "sessions.jsonl", line);
    session_order_.push_back(session.session_id);
    const json payload = session_payload(session);
    sessions_[session.session_id] = std::move(session);
    return {201, payload};
  } catch (const HttpError& e) {
    return error(e.status, e.what());
  }
}

HttpResult Service::respond(const json& req) {
  try {
    const std::string session_id = required_string(req, "session_id");
    const std::string case_id = required_string(req, "case_id");
    std::lock_guard lock(study_mutex_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw HttpError(404, "unknown session '" + session_id + "'");
    const StudyCase* c = nullptr;
    for (const auto& sc : it->second.cases)
      if (sc.case_id == case_id) c = &sc;
    if (!c) throw HttpError(404, "unknown case '" + case_id + "' in " + session_id);
    StudyRecord r;
    r.study_case = *c;
    r.reader_id = it->second.reader_id;
    r.session_id = session_id;
    r.confidence = likert(req, "response_confidence");
    r.correct_feature = likert(req, "response_correct_feature");
    for (const auto& prev : records_)
      if (prev.reader_id == r.reader_id && prev.study_case.case_id == case_id)
        throw HttpError(409, "reader '" + r.reader_id + "' already answered '" + case_id + "'");
    r.timestamp = utc_now();
    const json line = to_json(r);
    append_line(config_.data_dir / "study" / "responses.jsonl", line);
    records_.push_back(std::move(r));
    return {201, line};
  } catch (const HttpError& e) {
    return error(e.status, e.what());
  }
}

HttpResult Service::report() {
  std::lock_guard lock(study_mutex_);
  json j = study_report(records_).to_json();
  j["records"] = records_.size();
  j["sessions"] = session_order_;
  return {200, j};
}

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& svc = impl_->service;
  auto send = [](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto with_body = [send](httplib::Response& res, const std::string& text, auto&& fn) {
    json body;
    try {
      body = json::parse(text);
    } catch (const json::parse_error& e) {
      send(res, error(400, std::string("invalid JSON: ") + e.what()));
      return;
    }
    send(res, fn(body));
  };
  srv.Get("/models", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.models()); });
  srv.Get("/samples", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.samples()); });
  srv.Post("/explain", [&svc, with_body](const httplib::Request& req, httplib::Response& res) {
    const bool raw = req.has_param("raw") && req.get_param_value("raw") == "1";
    with_body(res, req.body, [&](const json& b) { return svc.explain(b, raw); });
  });
  srv.Post("/study/session", [&svc, with_body](const httplib::Request& req, httplib::Response& res) {
    with_body(res, req.body, [&](const json& b) { return svc.create_session(b); });
  });
  srv.Post("/study/response", [&svc, with_body](const httplib::Request& req, httplib::Response& res) {
    with_body(res, req.body, [&](const json& b) { return svc.respond(b); });
  });
  srv.Get("/study/report", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.report()); });
  srv.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error(500, what));
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  if (!impl_->server.bind_to_port(host, port)) return -1;
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace latentshift
