#include "glab/metrics.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <utility>

#include "glab/errors.hpp"
#include "json.hpp"

namespace glab {

Metric metric_cond_loglik(std::shared_ptr<const GaussianMixtureModel> gmm,
                          const NoiseSchedule& sched) {
  // At the data level the diffusion lift vanishes; alpha_bar[0] is exactly 1.
  const double abar0 = sched.alpha_bar.at(0);
  Metric m;
  m.name = "cond_loglik";
  m.higher_is_better = true;
  m.score = [gmm, abar0](const Vec& x, const Condition& c) {
    return diffused_log_density(*gmm, x, abar0, gmm->selected_components(c));
  };
  return m;
}

Metric metric_alignment(std::shared_ptr<const GaussianMixtureModel> gmm) {
  Metric m;
  m.name = "alignment";
  m.higher_is_better = true;
  m.score = [gmm](const Vec& x, const Condition& c) {
    return class_log_posterior(*gmm, x, gmm->selected_components(c));
  };
  return m;
}

struct ExternalScorer::Impl {
  std::string command;
  pid_t pid = -1;
  FILE* to_child = nullptr;
  FILE* from_child = nullptr;
  std::mutex mu;

  explicit Impl(std::string cmd) : command(std::move(cmd)) {
    // A scorer that dies mid-run must surface as a MetricError on the next
    // write, not tear down the whole process.
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int in_pipe[2];   // parent -> child
    int out_pipe[2];  // child -> parent
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
      throw MetricError("external scorer: pipe() failed: " +
                        std::string(std::strerror(errno)));
    }
    pid = fork();
    if (pid < 0) {
      throw MetricError("external scorer: fork() failed: " +
                        std::string(std::strerror(errno)));
    }
    if (pid == 0) {
      dup2(in_pipe[0], STDIN_FILENO);
      dup2(out_pipe[1], STDOUT_FILENO);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child = fdopen(in_pipe[1], "w");
    from_child = fdopen(out_pipe[0], "r");
    if (to_child == nullptr || from_child == nullptr) {
      throw MetricError("external scorer: fdopen() failed");
    }
  }

  ~Impl() {
    if (to_child) fclose(to_child);
    if (from_child) fclose(from_child);
    if (pid > 0) {
      int status = 0;
      waitpid(pid, &status, 0);
    }
  }

  double roundtrip(const std::string& request) {
    std::lock_guard<std::mutex> lock(mu);
    if (fputs(request.c_str(), to_child) == EOF || fputc('\n', to_child) == EOF ||
        fflush(to_child) != 0) {
      throw MetricError("external scorer '" + command + "': write failed");
    }
    char buf[1 << 16];
    if (fgets(buf, sizeof(buf), from_child) == nullptr) {
      throw MetricError("external scorer '" + command +
                        "': no reply (process exited?)");
    }
    try {
      nlohmann::json reply = nlohmann::json::parse(buf);
      return reply.at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw MetricError("external scorer '" + command +
                        "': bad reply: " + e.what());
    }
  }
};

ExternalScorer::ExternalScorer(std::string command)
    : impl_(std::make_unique<Impl>(std::move(command))) {}

ExternalScorer::~ExternalScorer() = default;

double ExternalScorer::score(const Vec& sample, const Condition& c) {
  nlohmann::json req = {{"condition", c.tokens}, {"sample", sample}};
  return impl_->roundtrip(req.dump());
}

Metric metric_external(const std::string& name, const std::string& command,
                       bool higher_is_better) {
  auto scorer = std::make_shared<ExternalScorer>(command);
  Metric m;
  m.name = name;
  m.higher_is_better = higher_is_better;
  m.score = [scorer](const Vec& x, const Condition& c) {
    return scorer->score(x, c);
  };
  return m;
}

}  // namespace glab
