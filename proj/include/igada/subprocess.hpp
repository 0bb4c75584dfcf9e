#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <vector>

#include "igada/core.hpp"

namespace igada {

/// Runs `/bin/sh -c command`, feeds `input` on stdin and returns everything
/// written to stdout. Throws RuntimeFailure on spawn errors, a nonzero exit
/// status, or when the child outlives `timeout` (it is killed first).
inline std::string run_subprocess(const std::string& command, const std::string& input,
                                  std::chrono::milliseconds timeout) {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw RuntimeFailure(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw RuntimeFailure(std::string("pipe: ") + std::strerror(errno));
  }

  pid_t pid = fork();
  if (pid < 0) throw RuntimeFailure(std::string("fork: ") + std::strerror(errno));
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

  // A child that exits without draining stdin must not kill us with SIGPIPE.
  struct sigaction ignore {}, previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string output;
  std::size_t written = 0;
  int write_fd = in_pipe[1];
  if (input.empty()) {
    close(write_fd);
    write_fd = -1;
  }
  bool timed_out = false;
  char buf[65536];

  while (true) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    pollfd fds[2];
    nfds_t nfds = 0;
    fds[nfds++] = {out_pipe[0], POLLIN, 0};
    if (write_fd >= 0) fds[nfds++] = {write_fd, POLLOUT, 0};
    int rc = poll(fds, nfds, static_cast<int>(std::min<long long>(remaining, 1000)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t n = write(write_fd, input.data() + written, input.size() - written);
      if (n > 0) written += static_cast<std::size_t>(n);
      if (n < 0 || written == input.size()) {
        close(write_fd);
        write_fd = -1;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      ssize_t n = read(out_pipe[0], buf, sizeof(buf));
      if (n > 0) output.append(buf, static_cast<std::size_t>(n));
      else if (n == 0) break;
    }
  }
  if (write_fd >= 0) close(write_fd);
  close(out_pipe[0]);
  sigaction(SIGPIPE, &previous, nullptr);

  int status = 0;
  if (timed_out) {
    kill(pid, SIGKILL);
    waitpid(pid, &status, 0);
    throw RuntimeFailure("subprocess timed out: " + command);
  }
  waitpid(pid, &status, 0);
  if (WIFSIGNALED(status))
    throw RuntimeFailure("subprocess killed by signal " + std::to_string(WTERMSIG(status)) + ": " + command);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw RuntimeFailure("subprocess exited with code " + std::to_string(WEXITSTATUS(status)) + ": " + command);
  return output;
}

}  // namespace igada
