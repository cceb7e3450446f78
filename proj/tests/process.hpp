#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dynarace/config.hpp"
#include "dynarace/error.hpp"

// Files, child processes and small runs shared by the pipeline suites.
namespace dynarace::testing {

inline std::filesystem::path make_temp_dir(const std::string& tag) {
  std::string tmpl = (std::filesystem::temp_directory_path() / ("dynarace_" + tag + "_XXXXXX")).string();
  if (mkdtemp(tmpl.data()) == nullptr) throw Error(ErrorCode::kStorageFailure, "mkdtemp failed for " + tmpl);
  return tmpl;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

template <typename P>
bool wait_until(P&& pred, int timeout_ms) {
  const auto end = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return pred();
}

// Starts args[0] with stdout and stderr sent to `log`.
inline pid_t spawn(const std::vector<std::string>& args, const std::filesystem::path& log) {
  const pid_t pid = fork();
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(fd, 1);
    dup2(fd, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(argv[0], argv.data());
    _exit(127);
  }
  return pid;
}

// Exit status, or -1 after a kill on timeout or an abnormal exit.
inline int wait_exit(pid_t pid, int timeout_ms) {
  int status = 0;
  if (!wait_until([&] { return waitpid(pid, &status, WNOHANG) == pid; }, timeout_ms)) {
    kill(pid, SIGKILL);
    waitpid(pid, &status, 0);
    return -1;
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small enough that a training round takes well under a second.
inline RunConfig tiny_config(const std::filesystem::path& dir) {
  RunConfig c;
  c.storage_dir = dir.string();
  c.seed = 3;
  c.warmstart_seconds = 20;
  c.round_sim_seconds = 6;
  c.episode_steps = 600;
  c.model.ensemble = 2;
  c.model.hidden = {16, 16};
  c.model_epochs = 1;
  c.model_first_epochs = 2;
  c.rollout.streams = 32;
  c.rollout.chunk = 32;
  c.rollout.t_max = 30;
  c.sac.hidden = {16, 16};
  c.sac.batch = 32;
  c.sac_updates = 20;
  c.eval_seconds = 2;
  c.threads = 1;
  return c;
}

}  // namespace dynarace::testing
