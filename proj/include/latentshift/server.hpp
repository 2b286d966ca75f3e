#pragma once

#include "latentshift/attribution.hpp"
#include "latentshift/study.hpp"
#include "latentshift/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace latentshift {

/// Data directory layout:
///   dataset/                      synthetic or ingested dataset
///   models/<id>/                  classifier and autoencoder directories
///   study/sessions.jsonl          one line per created session
///   study/responses.jsonl         one StudyRecord per line
struct ServiceConfig {
  std::filesystem::path data_dir;
  int default_cases = 24;
  std::uint64_t seed = 0;
  ExplainOptions explain;
};

/// Reads LS_DATA_DIR (default "data") and the listening port LS_PORT (default 8080).
ServiceConfig config_from_env();
int port_from_env();

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

struct StudySession {
  std::string session_id;
  std::string reader_id;
  std::uint64_t seed = 0;
  int arm = 0;
  std::vector<StudyCase> cases;
};

/// Transport-independent implementation of the HTTP API. Explain calls are
/// pure functions of the request; study calls append to durable logs.
class Service {
 public:
  explicit Service(ServiceConfig config);

  HttpResult models();
  HttpResult samples();
  /// {sample_id, model_id, task, method?, lambda?, ae_id?, session_id?, case_id?}
  HttpResult explain(const nlohmann::json& request, bool raw = false);
  /// {reader_id, cases?, seed?, arm?, model_id?}
  HttpResult create_session(const nlohmann::json& request);
  /// {session_id, case_id, response_confidence, response_correct_feature}
  HttpResult respond(const nlohmann::json& request);
  HttpResult report();

  const ServiceConfig& config() const { return config_; }

 private:
  std::shared_ptr<const Classifier> classifier(const std::string& id);
  std::shared_ptr<const Autoencoder> autoencoder(const std::string& id);
  std::optional<std::string> default_model(const std::string& kind);
  nlohmann::json lambda_bounds(const Sample& s, const std::string& model_id, const Classifier& clf,
                               const std::string& ae_id, const Autoencoder& ae, const std::string& task);
  const Sample* find_sample(const std::string& id) const;
  void load_study();
  void append_line(const std::filesystem::path& path, const nlohmann::json& line);

  ServiceConfig config_;
  std::vector<Sample> samples_;
  std::map<std::string, std::size_t> sample_index_;

  std::mutex model_mutex_;
  std::map<std::string, std::shared_ptr<const Classifier>> classifiers_;
  std::map<std::string, std::shared_ptr<const Autoencoder>> autoencoders_;
  std::map<std::string, nlohmann::json> bounds_;

  std::mutex study_mutex_;
  std::map<std::string, StudySession> sessions_;
  std::vector<std::string> session_order_;
  std::vector<StudyRecord> records_;
};

/// HTTP/1.1 front end. bind() returns the bound port (0 picks a free one);
/// listen() blocks until stop().
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  int bind(const std::string& host, int port);
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace latentshift
